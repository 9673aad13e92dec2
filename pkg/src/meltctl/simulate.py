"""Synthetic coaxial-signal generator standing in for the LPBF machine.

Ground truth is the dynamic per-line model evaluated on the scan program;
every frame on a line carries that line's value plus i.i.d. Gaussian noise.
Noise streams are Philox4x64 counter-based generators keyed by
(seed, line index), with the sample position within the line indexing into
the stream, so any parallel simulation schedule reproduces bit-identical
output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coax import (
    DEFAULT_JUMP_SPEED_MM_S,
    DEFAULT_SAMPLE_RATE_HZ,
    FRAME_PIXELS,
    FRAME_SHAPE,
    CoaxFrame,
    ScanSchedule,
    SignalSample,
    map_to_positions,
)
from .meltmodel import POWER_RANGE_W, PowerModel, eval_dynamic
from .scanpath import LayerScan, line_lengths

# Counts saturate at the frame pixel count.
_MAX_COUNT = FRAME_PIXELS

# Nominal hot-spot area as a fraction of the footprint; the hot spot is not
# modeled, this only keeps the c100 channel plausible and nested.
HOTSPOT_FRACTION = 0.03

# Default noise magnitude: the residual scale of the published single-scan fit.
DEFAULT_SIGMA_C1 = 175.0


@dataclass(frozen=True)
class NoiseConfig:
    """Additive Gaussian noise levels and the stream seed."""

    sigma_c1: float = DEFAULT_SIGMA_C1
    sigma_c100: float = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma_c1 < 0 or self.sigma_c100 < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed {self.seed} outside the unsigned 64-bit range")


@dataclass(frozen=True)
class SimOutput:
    """Simulated frame samples plus the noiseless per-line truth."""

    samples: list[SignalSample]
    truth_per_line: np.ndarray


def simulate_layer(
    scan: LayerScan,
    model: PowerModel,
    noise: NoiseConfig = NoiseConfig(),
    sample_rate: float = DEFAULT_SAMPLE_RATE_HZ,
    jump_speed: float = DEFAULT_JUMP_SPEED_MM_S,
) -> SimOutput:
    """Emit the coaxial signal of one layer scan under the given model.

    Frames arrive at ``sample_rate`` from t = 0 (start of the first line);
    frames during jumps read zero footprint and are flagged invalid, like the
    mapping stage would flag them.
    """
    powers = np.array([ln.power for ln in scan.lines])
    lo, hi = POWER_RANGE_W
    if powers.size and (powers.min() < lo or powers.max() > hi):
        bad = powers[(powers < lo) | (powers > hi)][0]
        raise ValueError(
            f"line power {bad:g} W outside model validity range [{lo:g}, {hi:g}] W"
        )
    lengths = line_lengths(scan)
    jumps = scan.jump_flags()
    truth = eval_dynamic(model, powers, lengths, jumps)

    sched = ScanSchedule(scan, jump_speed=jump_speed)
    n_samples = int(np.floor(sched.total_duration * sample_rate + 1e-9)) + 1
    times = np.arange(n_samples) / sample_rate
    mapped = map_to_positions(
        ((t, 0, 0) for t in times), scan, t0=0.0, jump_speed=jump_speed
    )

    by_line: dict[int, list[int]] = {}
    for i, s in enumerate(mapped):
        key = -1 if s.line_index is None else s.line_index
        by_line.setdefault(key, []).append(i)

    c1 = np.zeros(n_samples)
    c100 = np.zeros(n_samples)
    for key, idx in by_line.items():
        base = 0.0 if key < 0 else float(truth[key])
        rng = np.random.Generator(
            np.random.Philox(key=np.array([noise.seed, key + 1], dtype=np.uint64))
        )
        z = rng.standard_normal(size=(2, len(idx)))
        c1[idx] = base + noise.sigma_c1 * z[0]
        c100[idx] = HOTSPOT_FRACTION * base + noise.sigma_c100 * z[1]

    c1 = np.clip(np.rint(c1), 0, _MAX_COUNT).astype(int)
    c100 = np.clip(np.rint(c100), 0, _MAX_COUNT).astype(int)
    c100 = np.minimum(c100, c1)

    samples = [
        SignalSample(s.t, int(c1[i]), int(c100[i]), s.pos, s.line_index, s.valid)
        for i, s in enumerate(mapped)
    ]
    return SimOutput(samples=samples, truth_per_line=truth)


def _disk_fill_order() -> np.ndarray:
    rows, cols = np.indices(FRAME_SHAPE)
    cy = (FRAME_SHAPE[0] - 1) / 2.0
    cx = (FRAME_SHAPE[1] - 1) / 2.0
    d2 = (rows - cy) ** 2 + (cols - cx) ** 2
    return np.lexsort((cols.ravel(), rows.ravel(), d2.ravel()))


_FILL_ORDER = _disk_fill_order()


def render_frame(c1_target: int, c100_target: int, timestamp: float = 0.0) -> CoaxFrame:
    """Build a frame whose thresholded areas hit the targets exactly.

    Pixels fill outward from the frame center (distance, then row, then
    column order), the bright disk nested inside the dim one: the first
    ``c100_target`` pixels get intensity 200, the next
    ``c1_target - c100_target`` get 50.
    """
    if not 0 <= c100_target <= c1_target <= _MAX_COUNT:
        raise ValueError(
            f"infeasible targets: need 0 <= c100 ({c100_target}) <= "
            f"c1 ({c1_target}) <= {_MAX_COUNT}"
        )
    flat = np.zeros(FRAME_PIXELS, dtype=np.uint8)
    flat[_FILL_ORDER[:c100_target]] = 200
    flat[_FILL_ORDER[c100_target:c1_target]] = 50
    return CoaxFrame(flat.reshape(FRAME_SHAPE), timestamp)
