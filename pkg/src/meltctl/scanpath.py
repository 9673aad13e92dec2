"""Layer scan programs: parsing, writing, and meander hatching of polygons.

A layer scan is an ordered list of straight laser vectors, each with its own
power and speed. Consecutive vectors whose endpoints do not coincide imply a
"jump" (laser off, galvo repositioning); jumps are never stored explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Build envelope is 50 x 50 mm, centered on the origin.
BUILD_HALF_EXTENT_MM = 25.0

# Gap above which a line transition counts as repositioning (laser off).
# Meander row hops are at most a few hatch spacings (~0.25 mm at 90 um
# spacing even along shallow boundaries); cross-part moves are millimeters.
DEFAULT_JUMP_TOLERANCE_MM = 0.5

# Row intersections narrower than this graze a vertex and are dropped.
_DEGENERATE_SPAN_MM = 1e-12

# Minimum x-overlap for two intervals in adjacent rows to share a meander band.
_BAND_OVERLAP_MM = 1e-9


@dataclass(frozen=True)
class Point2:
    """A point on the build plate, millimeters."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinates ({self.x}, {self.y})")
        lim = BUILD_HALF_EXTENT_MM + 1e-9
        if abs(self.x) > lim or abs(self.y) > lim:
            raise ValueError(
                f"point ({self.x}, {self.y}) outside the "
                f"{2 * BUILD_HALF_EXTENT_MM:.0f} mm build envelope"
            )


def distance(a: Point2, b: Point2) -> float:
    return math.hypot(b.x - a.x, b.y - a.y)


@dataclass(frozen=True)
class ScanLine:
    """One straight scan vector with its commanded power and speed."""

    start: Point2
    end: Point2
    power: float  # W
    speed: float  # mm/s

    def __post_init__(self) -> None:
        if distance(self.start, self.end) <= 0.0:
            raise ValueError("zero-length scan line")
        if self.power < 0.0:
            raise ValueError(f"negative power {self.power}")
        if self.speed <= 0.0:
            raise ValueError(f"non-positive speed {self.speed}")

    @property
    def length(self) -> float:
        return distance(self.start, self.end)


@dataclass(frozen=True)
class LayerScan:
    """Ordered scan program for one layer; sequence order is execution order."""

    lines: tuple[ScanLine, ...]
    layer_id: int = 0

    def __len__(self) -> int:
        return len(self.lines)

    def jump_flags(self, tol: float = DEFAULT_JUMP_TOLERANCE_MM) -> np.ndarray:
        """True where no adjacent previously-scanned track exists.

        Element 0 is always True (nothing precedes the first line); element n
        is True iff the gap between line n-1's end and line n's start exceeds
        ``tol``.
        """
        flags = np.ones(len(self.lines), dtype=bool)
        for n in range(1, len(self.lines)):
            gap = distance(self.lines[n - 1].end, self.lines[n].start)
            flags[n] = gap > tol
        return flags

    def jump_distances(self, tol: float = DEFAULT_JUMP_TOLERANCE_MM) -> np.ndarray:
        """Repositioning distance preceding each line (0 where continuous)."""
        d = np.zeros(len(self.lines))
        for n in range(1, len(self.lines)):
            gap = distance(self.lines[n - 1].end, self.lines[n].start)
            if gap > tol:
                d[n] = gap
        return d


@dataclass(frozen=True)
class Polygon:
    """Simple closed polygon (implicit last-to-first edge), vertices in mm."""

    vertices: tuple[Point2, ...]

    def __post_init__(self) -> None:
        if len(self.vertices) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        if abs(self.signed_area()) <= 0.0:
            raise ValueError("degenerate polygon: zero area")
        if not self._is_simple():
            raise ValueError("polygon is self-intersecting")

    def signed_area(self) -> float:
        v = self.vertices
        s = 0.0
        for i in range(len(v)):
            j = (i + 1) % len(v)
            s += v[i].x * v[j].y - v[j].x * v[i].y
        return 0.5 * s

    def _is_simple(self) -> bool:
        v = self.vertices
        n = len(v)
        for i in range(n):
            if v[i].x == v[(i + 1) % n].x and v[i].y == v[(i + 1) % n].y:
                return False  # repeated vertex, zero-length edge
        for i in range(n):
            a1, a2 = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                b1, b2 = v[j], v[(j + 1) % n]
                if (j + 1) % n == i or (i + 1) % n == j:
                    # adjacent edges: reject only a fold-back onto the shared edge
                    if _collinear_overlap(a1, a2, b1, b2):
                        return False
                    continue
                if _segments_intersect(a1, a2, b1, b2):
                    return False
        return True


def _cross(o: Point2, a: Point2, b: Point2) -> float:
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)


def _on_segment(p: Point2, q: Point2, r: Point2) -> bool:
    return (
        min(p.x, r.x) <= q.x <= max(p.x, r.x)
        and min(p.y, r.y) <= q.y <= max(p.y, r.y)
    )


def _segments_intersect(p1: Point2, p2: Point2, p3: Point2, p4: Point2) -> bool:
    d1 = _cross(p3, p4, p1)
    d2 = _cross(p3, p4, p2)
    d3 = _cross(p1, p2, p3)
    d4 = _cross(p1, p2, p4)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if d1 == 0 and _on_segment(p3, p1, p4):
        return True
    if d2 == 0 and _on_segment(p3, p2, p4):
        return True
    if d3 == 0 and _on_segment(p1, p3, p2):
        return True
    if d4 == 0 and _on_segment(p1, p4, p2):
        return True
    return False


def _collinear_overlap(a1: Point2, a2: Point2, b1: Point2, b2: Point2) -> bool:
    """True if two edges sharing a vertex lie on one line and double back."""
    if _cross(a1, a2, b1) != 0 or _cross(a1, a2, b2) != 0:
        return False
    # Shared endpoint plus collinearity: overlap iff directions oppose.
    ax, ay = a2.x - a1.x, a2.y - a1.y
    bx, by = b2.x - b1.x, b2.y - b1.y
    return ax * bx + ay * by < 0


def parse_scanfile(data: bytes | str) -> LayerScan:
    """Parse the 6-field text scan format into a LayerScan.

    One record per line: ``x0 y0 x1 y1 power speed`` (mm, mm, mm, mm, W,
    mm/s). ``#`` starts a comment, blank lines are skipped, LF/CRLF both
    accepted. A ``# layer N`` comment sets the layer id.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines: list[ScanLine] = []
    layer_id = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            tokens = stripped[1:].split()
            if len(tokens) == 2 and tokens[0] == "layer":
                try:
                    layer_id = int(tokens[1])
                except ValueError:
                    pass
            continue
        fields = stripped.split()
        if len(fields) != 6:
            raise ValueError(
                f"scan file line {lineno}: expected 6 fields, got {len(fields)}"
            )
        try:
            x0, y0, x1, y1, power, speed = (float(tok) for tok in fields)
        except ValueError:
            bad = next(tok for tok in fields if not _is_number(tok))
            raise ValueError(
                f"scan file line {lineno}: non-numeric field {bad!r}"
            ) from None
        lines.append(ScanLine(Point2(x0, y0), Point2(x1, y1), power, speed))
    if not lines:
        raise ValueError("no scan lines")
    return LayerScan(tuple(lines), layer_id=layer_id)


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def write_scanfile(scan: LayerScan) -> bytes:
    """Serialize a LayerScan to the text scan format (LF line endings).

    Coordinates and powers are written with 6 decimal places, so a
    parse/write round trip preserves them to 1e-6 mm / 1e-6 W.
    """
    if not scan.lines:
        raise ValueError("refusing to write an empty layer scan")
    out = [f"# layer {scan.layer_id}"]
    for ln in scan.lines:
        out.append(
            f"{ln.start.x:.6f} {ln.start.y:.6f} {ln.end.x:.6f} {ln.end.y:.6f} "
            f"{ln.power:.6f} {ln.speed:.6f}"
        )
    return ("\n".join(out) + "\n").encode("utf-8")


def line_lengths(scan: LayerScan) -> np.ndarray:
    """Euclidean length of every line, in execution order."""
    return np.array([ln.length for ln in scan.lines], dtype=float)


@dataclass
class _Interval:
    """One row/polygon intersection in the rotated (hatch-aligned) frame."""

    row: int
    y: float
    x0: float
    x1: float
    taken: bool = field(default=False, compare=False)

    def endpoint(self, side: int) -> tuple[float, float]:
        return (self.x0 if side == 0 else self.x1, self.y)


def _row_intervals(xs: list[float], ys: list[float], y: float) -> list[tuple[float, float]]:
    """Intersect the horizontal line at ``y`` with the polygon (even-odd rule).

    Crossings use a half-open rule (y1 <= y < y2) so rows passing through a
    vertex are counted once; horizontal edges contribute nothing.
    """
    crossings: list[float] = []
    n = len(xs)
    for i in range(n):
        j = (i + 1) % n
        y1, y2 = ys[i], ys[j]
        if y1 == y2:
            continue
        if (y1 <= y < y2) or (y2 <= y < y1):
            t = (y - y1) / (y2 - y1)
            crossings.append(xs[i] + t * (xs[j] - xs[i]))
    crossings.sort()
    spans: list[tuple[float, float]] = []
    for k in range(0, len(crossings) - 1, 2):
        a, b = crossings[k], crossings[k + 1]
        if b - a > _DEGENERATE_SPAN_MM:
            spans.append((a, b))
    return spans


def _x_overlap(a: _Interval, b: _Interval) -> float:
    return min(a.x1, b.x1) - max(a.x0, b.x0)


def hatch_polygon(
    poly: Polygon,
    angle_deg: float,
    hatch_spacing: float,
    power: float,
    speed: float,
    layer_id: int = 0,
) -> LayerScan:
    """Fill a polygon with parallel meander scan lines at ``angle_deg``.

    Rows sit at offsets (k + 0.5) * spacing from the polygon's minimal extent
    along the hatch normal. Within a band (x-overlapping intervals in
    consecutive rows) the scan direction alternates snake-like; disjoint
    regions of non-convex polygons become separate bands joined by jumps,
    ordered by greedy nearest-endpoint continuation.
    """
    if hatch_spacing <= 0.0:
        raise ValueError(f"hatch spacing must be positive, got {hatch_spacing}")

    ang = math.radians(angle_deg)
    c, s = math.cos(ang), math.sin(ang)
    # Rotate by -angle so hatch rows are horizontal in the working frame.
    rx = [v.x * c + v.y * s for v in poly.vertices]
    ry = [-v.x * s + v.y * c for v in poly.vertices]
    ymin, ymax = min(ry), max(ry)

    intervals: list[_Interval] = []
    by_row: dict[int, list[_Interval]] = {}
    k = 0
    while True:
        y = ymin + (k + 0.5) * hatch_spacing
        if y >= ymax:
            break
        for x0, x1 in _row_intervals(rx, ry, y):
            iv = _Interval(row=k, y=y, x0=x0, x1=x1)
            intervals.append(iv)
            by_row.setdefault(k, []).append(iv)
        k += 1

    if not intervals:
        raise ValueError("no hatch coverage: spacing exceeds polygon extent")

    ordered = _order_meander(intervals, by_row)

    lines = []
    for iv, side in ordered:
        sx, sy = iv.endpoint(side)
        ex, ey = iv.endpoint(1 - side)
        start = Point2(sx * c - sy * s, sx * s + sy * c)
        end = Point2(ex * c - ey * s, ex * s + ey * c)
        lines.append(ScanLine(start, end, power, speed))
    return LayerScan(tuple(lines), layer_id=layer_id)


def _order_meander(
    intervals: list[_Interval], by_row: dict[int, list[_Interval]]
) -> list[tuple[_Interval, int]]:
    """Execution order: (interval, start side) pairs; side 0 = x0, 1 = x1."""
    remaining = len(intervals)
    ordered: list[tuple[_Interval, int]] = []
    pos: tuple[float, float] | None = None

    def free(row: int) -> list[_Interval]:
        return [w for w in by_row.get(row, []) if not w.taken]

    while remaining:
        if pos is None:
            iv = min(
                (w for w in intervals if not w.taken),
                key=lambda w: (w.row, w.x0),
            )
            side = 0
        else:
            iv = min(
                (w for w in intervals if not w.taken),
                key=lambda w: (
                    min(
                        math.dist(pos, w.endpoint(0)),
                        math.dist(pos, w.endpoint(1)),
                    ),
                    w.row,
                    w.x0,
                ),
            )
            # Slide to the bottom of this region so the band sweeps upward.
            while True:
                below = [w for w in free(iv.row - 1) if _x_overlap(w, iv) > _BAND_OVERLAP_MM]
                if not below:
                    break
                iv = min(below, key=lambda w: w.x0)
            d0 = math.dist(pos, iv.endpoint(0))
            d1 = math.dist(pos, iv.endpoint(1))
            side = 0 if d0 <= d1 else 1

        while True:
            ordered.append((iv, side))
            iv.taken = True
            remaining -= 1
            end = iv.endpoint(1 - side)
            cands = [w for w in free(iv.row + 1) if _x_overlap(w, iv) > _BAND_OVERLAP_MM]
            if not cands:
                pos = end
                break
            # Meander: the next line starts on the side the previous ended on.
            side = 1 - side
            iv = min(
                cands,
                key=lambda w: (math.dist(end, w.endpoint(side)), w.x0),
            )
    return ordered
