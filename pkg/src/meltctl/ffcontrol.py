"""Feedforward laser-power regulation over a layer scan.

Chooses per-line powers minimizing the squared deviation of the predicted
footprint from a constant reference, under box constraints. The cost couples
consecutive lines only (each line's prediction depends on its own power and
the previous line's power and length), so the analytic gradient is banded
and a projected gradient method with Barzilai-Borwein steps and Armijo
backtracking converges quickly; a dynamic program over the discretized
power grid serves as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .meltmodel import POWER_RANGE_W, PowerModel, eval_dynamic
from .scanpath import LayerScan, line_lengths

DEFAULT_C_REF = 1500.0
DEFAULT_MAX_ITER = 10_000
DEFAULT_TOL_SCALE = 1e-6

_ARMIJO_SIGMA = 1e-4
_BB_STEP_RANGE = (1e-8, 1e2)


@dataclass(frozen=True)
class ControlProblem:
    """Regulate predicted C1 to ``c_ref`` over lines of given lengths."""

    lengths: tuple[float, ...]
    jumps: tuple[bool, ...]
    model: PowerModel
    c_ref: float = DEFAULT_C_REF
    p_min: float = POWER_RANGE_W[0]
    p_max: float = POWER_RANGE_W[1]

    def __post_init__(self) -> None:
        if len(self.lengths) == 0:
            raise ValueError("control problem needs at least one line")
        if len(self.jumps) != len(self.lengths):
            raise ValueError(
                f"jumps ({len(self.jumps)}) and lengths ({len(self.lengths)}) differ"
            )
        if any(l <= 0 for l in self.lengths):
            raise ValueError("line lengths must be positive")
        if not self.p_min < self.p_max:
            raise ValueError(f"need p_min < p_max, got [{self.p_min}, {self.p_max}]")
        lo, hi = POWER_RANGE_W
        if self.p_min < lo - 1e-9 or self.p_max > hi + 1e-9:
            raise ValueError(
                f"bounds [{self.p_min}, {self.p_max}] exceed the model "
                f"validity range [{lo:g}, {hi:g}]"
            )

    @property
    def n_lines(self) -> int:
        return len(self.lengths)


@dataclass(frozen=True)
class PowerProfile:
    """Per-line power solution with solver diagnostics."""

    powers: tuple[float, ...]
    cost: float
    iterations: int
    converged: bool


def problem_from_scan(
    scan: LayerScan,
    model: PowerModel,
    c_ref: float = DEFAULT_C_REF,
    p_min: float = POWER_RANGE_W[0],
    p_max: float = POWER_RANGE_W[1],
) -> ControlProblem:
    """Build the regulation problem for an existing scan program."""
    return ControlProblem(
        lengths=tuple(line_lengths(scan).tolist()),
        jumps=tuple(bool(j) for j in scan.jump_flags()),
        model=model,
        c_ref=c_ref,
        p_min=p_min,
        p_max=p_max,
    )


def predict_c1(problem: ControlProblem, powers) -> np.ndarray:
    """Dynamic-model prediction for a candidate power vector."""
    return eval_dynamic(problem.model, powers, problem.lengths, problem.jumps)


def _cost_and_grad(problem: ControlProblem, p: np.ndarray):
    m = problem.model
    lengths = np.asarray(problem.lengths)
    jumps = np.asarray(problem.jumps, dtype=bool)
    e = predict_c1(problem, p) - problem.c_ref
    cost = float(e @ e)
    g = 2.0 * e * m.c_inf_slope
    if len(p) > 1:
        r = m.r(p[:-1])
        ex = np.exp(-lengths[:-1] / r)
        dc = m.delta_c(p[:-1])
        dc_prime = 2.0 * m.dc_quad * p[:-1] + m.dc_lin
        d_carry = ex * (dc_prime + dc * lengths[:-1] * m.r_slope / (r * r))
        g[:-1] += 2.0 * e[1:] * d_carry * ~jumps[1:]
    return cost, g


def _projected_gradient_norm(p, g, p_min, p_max) -> float:
    pg = g.copy()
    at_lo = p <= p_min
    at_hi = p >= p_max
    pg[at_lo] = np.minimum(g[at_lo], 0.0)
    pg[at_hi] = np.maximum(g[at_hi], 0.0)
    return float(np.linalg.norm(pg))


def optimize_powers(
    problem: ControlProblem,
    max_iter: int = DEFAULT_MAX_ITER,
    tol_scale: float = DEFAULT_TOL_SCALE,
) -> PowerProfile:
    """Solve the regulation problem by projected gradient descent.

    Warm starts at the steady-state inversion C_inf(p) = c_ref clamped to the
    bounds. First-order optimality: the bound-aware gradient norm falls below
    ``tol_scale * (1 + cost)``. A profile that hits the iteration cap is
    returned with ``converged=False``.
    """
    m = problem.model
    if abs(m.c_inf_slope) > 1e-12:
        p_ss = (problem.c_ref - m.c_inf_intercept) / m.c_inf_slope
    else:
        p_ss = 0.5 * (problem.p_min + problem.p_max)
    p = np.full(problem.n_lines, np.clip(p_ss, problem.p_min, problem.p_max))

    cost, g = _cost_and_grad(problem, p)
    alpha = 1.0 / (2.0 * m.c_inf_slope**2 + 1.0)
    prev_p = prev_g = None
    iterations = 0
    converged = False
    for _ in range(max_iter):
        if _projected_gradient_norm(p, g, problem.p_min, problem.p_max) < tol_scale * (
            1.0 + cost
        ):
            converged = True
            break
        if prev_p is not None:
            s = p - prev_p
            y = g - prev_g
            sy = float(s @ y)
            if sy > 1e-300:
                alpha = float(np.clip((s @ s) / sy, *_BB_STEP_RANGE))
        accepted = False
        step = alpha
        for _ in range(60):
            trial = np.clip(p - step * g, problem.p_min, problem.p_max)
            move = p - trial
            if not move.any():
                break
            trial_cost, trial_g = _cost_and_grad(problem, trial)
            if trial_cost <= cost - _ARMIJO_SIGMA * float(g @ move):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no descent along the projected path: numerically stationary
            converged = True
            break
        prev_p, prev_g = p, g
        p, cost, g = trial, trial_cost, trial_g
        iterations += 1

    return PowerProfile(
        powers=tuple(float(v) for v in p),
        cost=cost,
        iterations=iterations,
        converged=converged,
    )


def brute_force_powers(problem: ControlProblem, grid_step: float) -> PowerProfile:
    """Exact minimizer over the discretized power grid, by chain DP.

    State is the previous line's grid power; stage cost couples (p_{n-1},
    p_n) exactly as the dynamic model does. Ties break toward lower power.
    Independent of the continuous solver; intended as its oracle.
    """
    if grid_step <= 0:
        raise ValueError(f"grid step must be positive, got {grid_step}")
    span = problem.p_max - problem.p_min
    n_steps = int(np.floor(span / grid_step + 1e-9))
    if n_steps < 1:
        raise ValueError(
            f"grid step {grid_step} too coarse to bracket bounds "
            f"[{problem.p_min}, {problem.p_max}]"
        )
    grid = problem.p_min + np.arange(n_steps + 1) * grid_step
    m = problem.model
    lengths = np.asarray(problem.lengths)
    jumps = np.asarray(problem.jumps, dtype=bool)
    n = problem.n_lines
    G = len(grid)

    head = np.asarray(m.c_inf(grid)) - problem.c_ref  # per-grid own term
    # carry[i] for a previous line of length l: dc(grid_i) * exp(-l / r(grid_i))
    dc = np.asarray(m.delta_c(grid))
    r = np.asarray(m.r(grid))

    D = head**2  # stage 0 never carries heat
    parents: list[np.ndarray | None] = [None]
    block = max(1, int(4_000_000 // max(G, 1)))
    for stage in range(1, n):
        if jumps[stage]:
            # decoupled: best predecessor is global, same for every j
            i_best = int(np.argmin(D))
            D = D[i_best] + head**2
            parents.append(np.full(G, i_best))
            continue
        carry = dc * np.exp(-lengths[stage - 1] / r)
        best_val: np.ndarray | None = None
        best_arg: np.ndarray | None = None
        for i0 in range(0, G, block):
            i1 = min(i0 + block, G)
            M = D[i0:i1, None] + (head[None, :] + carry[i0:i1, None]) ** 2
            val = M.min(axis=0)
            arg = M.argmin(axis=0) + i0
            if best_val is None:
                best_val, best_arg = val, arg
            else:
                better = val < best_val
                best_arg = np.where(better, arg, best_arg)
                best_val = np.where(better, val, best_val)
        D = best_val
        parents.append(best_arg)

    j = int(np.argmin(D))
    cost = float(D[j])
    idx = [j]
    for stage in range(n - 1, 0, -1):
        j = int(parents[stage][j])
        idx.append(j)
    idx.reverse()
    return PowerProfile(
        powers=tuple(float(grid[i]) for i in idx),
        cost=cost,
        iterations=n,
        converged=True,
    )


def apply_profile(scan: LayerScan, profile: PowerProfile) -> LayerScan:
    """Return the scan with per-line powers replaced by the profile."""
    if len(profile.powers) != len(scan.lines):
        raise ValueError(
            f"profile has {len(profile.powers)} powers for "
            f"{len(scan.lines)} scan lines"
        )
    lines = tuple(
        replace(ln, power=float(p)) for ln, p in zip(scan.lines, profile.powers)
    )
    return LayerScan(lines, layer_id=scan.layer_id)
