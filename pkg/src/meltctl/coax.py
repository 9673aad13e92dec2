"""Coaxial melt-pool signals: thresholded areas and time-to-space mapping.

Frames are 64x64 8-bit intensity images sampled at 2 kHz. Each frame reduces
to the pixel counts C_alpha = #{I >= alpha} for alpha in {1, 100}; samples
are then placed on the nominal scan trajectory by integrating the scan
program at constant per-line speed (jumps traversed laser-off at a fixed
repositioning speed).
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scanpath import DEFAULT_JUMP_TOLERANCE_MM, LayerScan, Point2

FRAME_SHAPE = (64, 64)
FRAME_PIXELS = FRAME_SHAPE[0] * FRAME_SHAPE[1]

DEFAULT_SAMPLE_RATE_HZ = 2000.0
DEFAULT_JUMP_SPEED_MM_S = 5000.0

# Below this line length the nominal position mapping is unreliable; such
# samples are excluded from identification and aggregation.
MIN_MODEL_LINE_MM = 0.5

SIGNAL_CSV_HEADER = ("t", "c1", "c100", "x", "y", "line", "valid")
_FRAMES_MAGIC = b"MLTF"


@dataclass(frozen=True)
class CoaxFrame:
    """One melt-pool intensity image with its camera timestamp."""

    intensities: np.ndarray  # (64, 64) uint8
    timestamp: float  # s

    def __post_init__(self) -> None:
        arr = np.asarray(self.intensities)
        if arr.shape != FRAME_SHAPE:
            raise ValueError(f"frame must be {FRAME_SHAPE}, got {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValueError("frame intensities must be integers")
            if arr.min() < 0 or arr.max() > 255:
                raise ValueError("frame intensities must be within [0, 255]")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "intensities", arr)


@dataclass(frozen=True)
class SignalSample:
    """One frame reduced to scalars and mapped onto the scan program."""

    t: float
    c1: int
    c100: int
    pos: Point2
    line_index: int | None
    valid: bool

    def __post_init__(self) -> None:
        if not 0 <= self.c1 <= FRAME_PIXELS:
            raise ValueError(f"c1 count {self.c1} outside [0, {FRAME_PIXELS}]")
        if not 0 <= self.c100 <= self.c1:
            raise ValueError(
                f"c100 count {self.c100} outside [0, c1={self.c1}]"
            )


def c_alpha(frame: CoaxFrame, alpha: int) -> int:
    """Count pixels with intensity >= alpha (the thresholded level-set
    area); alpha must be an integer level in [1, 255]."""
    if not 1 <= alpha <= 255:
        raise ValueError(f"threshold {alpha} outside [1, 255]")
    return int(np.count_nonzero(frame.intensities >= alpha))


@dataclass(frozen=True)
class _Segment:
    t0: float
    t1: float
    line_index: int | None  # None marks a laser-off jump
    x0: float
    y0: float
    vx: float
    vy: float

    def position(self, t: float) -> Point2:
        dt = t - self.t0
        return Point2(self.x0 + self.vx * dt, self.y0 + self.vy * dt)


class ScanSchedule:
    """Nominal time base of a scan program.

    Lines run at their own constant speed; a jump segment (at ``jump_speed``)
    is inserted wherever consecutive endpoints differ by more than
    ``jump_tol``. Sub-tolerance hops (meander row transitions) take no time.
    """

    def __init__(
        self,
        scan: LayerScan,
        jump_speed: float = DEFAULT_JUMP_SPEED_MM_S,
        jump_tol: float = DEFAULT_JUMP_TOLERANCE_MM,
    ) -> None:
        if not scan.lines:
            raise ValueError("empty scan program")
        segments: list[_Segment] = []
        t = 0.0
        for n, ln in enumerate(scan.lines):
            if n > 0:
                prev = scan.lines[n - 1].end
                gap = math.hypot(ln.start.x - prev.x, ln.start.y - prev.y)
                if gap > jump_tol:
                    dur = gap / jump_speed
                    segments.append(
                        _Segment(
                            t,
                            t + dur,
                            None,
                            prev.x,
                            prev.y,
                            (ln.start.x - prev.x) / dur,
                            (ln.start.y - prev.y) / dur,
                        )
                    )
                    t += dur
            dur = ln.length / ln.speed
            segments.append(
                _Segment(
                    t,
                    t + dur,
                    n,
                    ln.start.x,
                    ln.start.y,
                    (ln.end.x - ln.start.x) / dur,
                    (ln.end.y - ln.start.y) / dur,
                )
            )
            t += dur
        self.segments = segments
        self.total_duration = t
        self._starts = np.array([s.t0 for s in segments])
        self._line_lengths = np.array([ln.length for ln in scan.lines])

    def locate(self, t_rel: float) -> _Segment:
        idx = int(np.searchsorted(self._starts, t_rel, side="right")) - 1
        return self.segments[max(idx, 0)]

    def line_length(self, n: int) -> float:
        return float(self._line_lengths[n])


def map_to_positions(
    samples,
    scan: LayerScan,
    t0: float,
    jump_speed: float = DEFAULT_JUMP_SPEED_MM_S,
    jump_tol: float = DEFAULT_JUMP_TOLERANCE_MM,
    min_line: float = MIN_MODEL_LINE_MM,
) -> list[SignalSample]:
    """Assign nominal positions and line indices to (t, c1, c100) triples.

    Samples falling inside a jump, or on a line shorter than ``min_line``,
    are flagged invalid. Timestamps must not overrun the scan program.
    """
    sched = ScanSchedule(scan, jump_speed=jump_speed, jump_tol=jump_tol)
    eps = 1e-12
    out: list[SignalSample] = []
    for t, c1, c100 in samples:
        rel = t - t0
        if rel < -eps:
            raise ValueError(f"sample at t={t} precedes scan start t0={t0}")
        if rel > sched.total_duration + eps:
            raise ValueError(
                f"sample at t={t} overruns scan end by "
                f"{rel - sched.total_duration:.6g} s"
            )
        seg = sched.locate(min(rel, sched.total_duration))
        pos = seg.position(min(max(rel, seg.t0), seg.t1))
        if seg.line_index is None:
            out.append(SignalSample(t, int(c1), int(c100), pos, None, False))
        else:
            ok = sched.line_length(seg.line_index) >= min_line
            out.append(
                SignalSample(t, int(c1), int(c100), pos, seg.line_index, ok)
            )
    return out


def per_line_aggregate(samples) -> list[tuple[int, float, int]]:
    """Mean C1 of the valid samples on each line: (line, mean c1, count).

    Lines without a single valid sample are omitted.
    """
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for s in samples:
        if not s.valid or s.line_index is None:
            continue
        sums[s.line_index] = sums.get(s.line_index, 0.0) + s.c1
        counts[s.line_index] = counts.get(s.line_index, 0) + 1
    return [(n, sums[n] / counts[n], counts[n]) for n in sorted(sums)]


def estimate_line_lengths(samples) -> dict[int, float]:
    """Reconstruct per-line lengths from mapped sample positions.

    Length is the span between the first and last sample on the line plus one
    nominal sample step (median consecutive in-line distance over the whole
    record), which makes the estimator unbiased for lines carrying at least
    two samples.
    """
    by_line: dict[int, list[SignalSample]] = {}
    for s in samples:
        if s.line_index is not None:
            by_line.setdefault(s.line_index, []).append(s)
    steps: list[float] = []
    for grp in by_line.values():
        grp.sort(key=lambda s: s.t)
        for a, b in zip(grp, grp[1:]):
            steps.append(math.hypot(b.pos.x - a.pos.x, b.pos.y - a.pos.y))
    step = float(np.median(steps)) if steps else 0.0
    lengths: dict[int, float] = {}
    for n, grp in by_line.items():
        first, last = grp[0], grp[-1]
        span = math.hypot(last.pos.x - first.pos.x, last.pos.y - first.pos.y)
        lengths[n] = span + step
    return lengths


# ----------------------------------------------------------------- signal CSV


def write_signal_csv(samples, dest) -> None:
    """Write samples as CSV: t,c1,c100,x,y,line,valid (line empty on jumps)."""
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        fh.write(",".join(SIGNAL_CSV_HEADER) + "\n")
        for s in samples:
            line = "" if s.line_index is None else str(s.line_index)
            fh.write(
                f"{s.t:.6f},{s.c1},{s.c100},{s.pos.x:.6f},{s.pos.y:.6f},"
                f"{line},{1 if s.valid else 0}\n"
            )
    finally:
        if own:
            fh.close()


def read_signal_csv(src) -> list[SignalSample]:
    own = isinstance(src, (str, Path))
    fh = open(src, "r", newline="") if own else src
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SIGNAL_CSV_HEADER:
            raise ValueError(f"bad signal CSV header: {header}")
        out = []
        for row in reader:
            if not row:
                continue
            t, c1, c100, x, y, line, valid = row
            out.append(
                SignalSample(
                    float(t),
                    int(c1),
                    int(c100),
                    Point2(float(x), float(y)),
                    int(line) if line else None,
                    valid == "1",
                )
            )
        return out
    finally:
        if own:
            fh.close()


# --------------------------------------------------------------- frame binary


def write_frames(frames, dest, timestamps_dest=None) -> None:
    """Write frames as raw binary: b'MLTF', uint32 LE count, then 4096-byte
    row-major frames; timestamps go to a sidecar CSV."""
    frames = list(frames)
    if timestamps_dest is None:
        timestamps_dest = str(dest) + ".timestamps.csv"
    with open(dest, "wb") as fh:
        fh.write(_FRAMES_MAGIC)
        fh.write(struct.pack("<I", len(frames)))
        for f in frames:
            fh.write(f.intensities.tobytes(order="C"))
    with open(timestamps_dest, "w", newline="") as fh:
        fh.write("t\n")
        for f in frames:
            fh.write(f"{f.timestamp:.6f}\n")


def read_frames(src, timestamps_src=None) -> list[CoaxFrame]:
    if timestamps_src is None:
        timestamps_src = str(src) + ".timestamps.csv"
    with open(src, "rb") as fh:
        magic = fh.read(4)
        if magic != _FRAMES_MAGIC:
            raise ValueError(f"bad frame file magic: {magic!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        raw = fh.read(count * FRAME_PIXELS)
        if len(raw) != count * FRAME_PIXELS:
            raise ValueError("truncated frame file")
    with open(timestamps_src, "r", newline="") as fh:
        rows = [r for r in fh.read().splitlines() if r]
    if rows[:1] != ["t"] or len(rows) - 1 != count:
        raise ValueError("frame timestamp sidecar does not match frame count")
    stamps = [float(r) for r in rows[1:]]
    frames = []
    for i in range(count):
        arr = np.frombuffer(
            raw, dtype=np.uint8, count=FRAME_PIXELS, offset=i * FRAME_PIXELS
        ).reshape(FRAME_SHAPE)
        frames.append(CoaxFrame(arr.copy(), stamps[i]))
    return frames
