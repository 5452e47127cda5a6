"""Level line extraction and curve annotation.

Level lines are the iso-contours of the bilinearly interpolated image at
quantized gray values, traced by marching squares with sub-pixel edge
interpolation.  Curves are oriented so the upper level set {u >= level} lies
to the left of the travel direction (for closed lines around bright regions
this is clockwise on screen).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCurve
from .imageio import validate_image

DEFAULT_SPACING = 1.5
MIN_POINTS = 8


@dataclass
class LevelLine:
    """Oriented polygonal iso-contour at one gray level.

    `points` is an (N, 2) array of (x, y) image coordinates; for closed
    curves the last point connects back to the first (not repeated).
    """

    level: float
    points: np.ndarray
    closed: bool

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)

    def __len__(self):
        return len(self.points)

    @property
    def length(self) -> float:
        seg = np.diff(self.points, axis=0)
        total = float(np.hypot(seg[:, 0], seg[:, 1]).sum())
        if self.closed:
            total += float(np.hypot(*(self.points[0] - self.points[-1])))
        return total


@dataclass
class CurveAnnotation:
    """Per-vertex differential data for a (resampled) level line."""

    curvature: np.ndarray            # signed scalar per vertex
    normal: np.ndarray               # unit vector toward the osculating center
    inflection_indices: list = field(default_factory=list)


# marching-squares segment table: for each of the 16 corner sign cases the
# pairs of crossed edges to connect.  Edges are numbered 0: top, 1: right,
# 2: bottom, 3: left.  Corner bit order: 1 = top-left, 2 = top-right,
# 4 = bottom-right, 8 = bottom-left (bit set = corner above level).
_CASE_SEGMENTS = {
    0: [], 15: [],
    1: [(3, 0)], 14: [(0, 3)],
    2: [(0, 1)], 13: [(1, 0)],
    4: [(1, 2)], 11: [(2, 1)],
    8: [(2, 3)], 7: [(3, 2)],
    3: [(3, 1)], 12: [(1, 3)],
    6: [(0, 2)], 9: [(2, 0)],
    # saddles resolved by the caller with the cell-center value
    5: None, 10: None,
}


def _edge_key(i, j, edge):
    """Globally unique key for a cell edge: horizontal edges are keyed by
    their top-left pixel, vertical edges by their left pixel."""
    if edge == 0:
        return ("h", i, j)
    if edge == 2:
        return ("h", i + 1, j)
    if edge == 3:
        return ("v", i, j)
    return ("v", i, j + 1)


def _trace_level(img: np.ndarray, level: float) -> list[tuple[np.ndarray, bool]]:
    """All contours of the bilinear interpolant at one level.

    Returns (points, closed) pairs in discovery order (border-touching open
    curves first, then interior loops, both row-major).
    """
    h, w = img.shape
    s = img - level
    # symbolic perturbation: exact hits count as above-level
    s = np.where(s == 0.0, 1e-12, s)
    above = s > 0

    # sub-pixel crossing positions on horizontal / vertical pixel edges
    cross_h = above[:, :-1] != above[:, 1:]
    cross_v = above[:-1, :] != above[1:, :]
    th = np.zeros_like(img[:, :-1])
    np.divide(s[:, :-1], s[:, :-1] - s[:, 1:], out=th, where=cross_h)
    tv = np.zeros_like(img[:-1, :])
    np.divide(s[:-1, :], s[:-1, :] - s[1:, :], out=tv, where=cross_v)

    def edge_point(key):
        kind, i, j = key
        if kind == "h":
            return (j + th[i, j], float(i))
        return (float(j), i + tv[i, j])

    # per-cell oriented segments: succ[start_edge_key] = end_edge_key
    succ: dict = {}
    b = above
    for i in range(h - 1):
        row = b[i]
        row1 = b[i + 1]
        for j in range(w - 1):
            case = (1 if row[j] else 0) | (2 if row[j + 1] else 0) | \
                   (4 if row1[j + 1] else 0) | (8 if row1[j] else 0)
            segs = _CASE_SEGMENTS[case]
            if segs is None:
                # saddle: connect so the center's side joins like corners
                center = s[i, j] + s[i, j + 1] + s[i + 1, j] + s[i + 1, j + 1]
                if case == 5:
                    segs = [(3, 2), (1, 0)] if center > 0 else [(3, 0), (1, 2)]
                else:
                    segs = [(0, 3), (2, 1)] if center > 0 else [(0, 1), (2, 3)]
            for e0, e1 in segs:
                succ[_edge_key(i, j, e0)] = _edge_key(i, j, e1)
    if not succ:
        return []

    starts = set(succ) - set(succ.values())  # open chains start here

    contours = []
    for start in sorted(starts):
        chain = [start]
        key = start
        while key in succ:
            key = succ.pop(key)
            chain.append(key)
        contours.append((chain, False))
    while succ:
        start = min(succ)
        chain = [start]
        key = succ.pop(start)
        while key != start:
            chain.append(key)
            key = succ.pop(key)
        contours.append((chain, True))

    out = []
    for chain, closed in contours:
        pts = np.array([edge_point(k) for k in chain])
        if len(pts) < 2:
            continue
        out.append((pts, closed))
    return out


def _orient_upper_left(pts: np.ndarray, closed: bool, img: np.ndarray,
                       level: float) -> np.ndarray:
    """Flip the contour if the upper level set is not on its left."""
    # probe the bilinear interpolant just left of the longest segment
    seg = np.diff(pts, axis=0)
    lens = np.hypot(seg[:, 0], seg[:, 1])
    k = int(np.argmax(lens))
    mid = 0.5 * (pts[k] + pts[k + 1])
    d = seg[k] / lens[k]
    left = np.array([-d[1], d[0]])  # algebraic left normal
    h, w = img.shape
    for step in (0.35, 0.2, 0.1):
        q = mid + step * left
        if 0 <= q[0] <= w - 1 and 0 <= q[1] <= h - 1:
            if _bilinear(img, q) >= level:
                return pts
            return pts[::-1]
    return pts


def _bilinear(img: np.ndarray, q) -> float:
    x, y = q
    j0, i0 = int(np.floor(x)), int(np.floor(y))
    j0 = min(max(j0, 0), img.shape[1] - 2)
    i0 = min(max(i0, 0), img.shape[0] - 2)
    fx, fy = x - j0, y - i0
    return ((1 - fx) * (1 - fy) * img[i0, j0] + fx * (1 - fy) * img[i0, j0 + 1]
            + (1 - fx) * fy * img[i0 + 1, j0] + fx * fy * img[i0 + 1, j0 + 1])


def extract_level_lines(img: np.ndarray, levels) -> list[LevelLine]:
    """Iso-contours of the bilinear interpolant at each requested level.

    Output ordered by level, then by discovery order in a row-major scan.
    Contours shorter than MIN_POINTS vertices after extraction are kept only
    if resampling can still produce a usable curve, i.e. dropped here when
    they have fewer than 3 vertices.
    """
    u = validate_image(img)
    lines = []
    for level in levels:
        for pts, closed in _trace_level(u, float(level)):
            if len(pts) < 3:
                continue
            pts = _orient_upper_left(pts, closed, u, float(level))
            lines.append(LevelLine(float(level), pts, closed))
    return lines


def resample_uniform(line: LevelLine, spacing: float = DEFAULT_SPACING) -> LevelLine:
    """Arc-length re-parametrization with near-uniform vertex spacing.

    Closed curves are re-phased to start at the vertex farthest from the
    centroid, so corresponding curves in rotated/mirrored images receive
    corresponding vertex sets (the extraction discovery order is grid
    dependent, the landmark is not).
    """
    pts = line.points
    if len(pts) < 2:
        raise DegenerateCurve("need at least 2 points")
    if line.closed:
        start = int(np.argmax(((pts - pts.mean(0)) ** 2).sum(1)))
        pts = np.roll(pts, -start, axis=0)
        pts = np.vstack([pts, pts[:1]])
    seg = np.diff(pts, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    total = cum[-1]
    if total <= 0:
        raise DegenerateCurve("zero-length curve")
    n = max(int(round(total / spacing)), MIN_POINTS)
    if line.closed:
        t = np.linspace(0.0, total, n, endpoint=False)
    else:
        t = np.linspace(0.0, total, n + 1)
    x = np.interp(t, cum, pts[:, 0])
    y = np.interp(t, cum, pts[:, 1])
    return LevelLine(line.level, np.column_stack([x, y]), line.closed)


def annotate(line: LevelLine) -> CurveAnnotation:
    """Signed curvature, unit normals and filtered inflection indices.

    Curvature is the circumscribed-circle (Menger) estimate over vertex
    triples, signed by the cross product of successive edges; the normal
    points toward the osculating-circle center.  A sign change counts as an
    inflection only if |curvature| exceeds 0.25x the curve's median
    |curvature| on both sides for at least 2 consecutive vertices.
    """
    pts = line.points
    n = len(pts)
    if line.closed:
        prev = np.roll(pts, 1, axis=0)
        nxt = np.roll(pts, -1, axis=0)
    else:
        prev = np.vstack([pts[0] - (pts[1] - pts[0]), pts[:-1]])
        nxt = np.vstack([pts[1:], pts[-1] + (pts[-1] - pts[-2])])
    e1 = pts - prev
    e2 = nxt - pts
    a = np.hypot(e1[:, 0], e1[:, 1])
    b = np.hypot(e2[:, 0], e2[:, 1])
    chord = nxt - prev
    c = np.hypot(chord[:, 0], chord[:, 1])
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    denom = a * b * c
    curv = np.zeros(n)
    ok = denom > 1e-12
    curv[ok] = 2.0 * cross[ok] / denom[ok]

    tang = chord.copy()
    tl = np.hypot(tang[:, 0], tang[:, 1])
    tl[tl == 0] = 1.0
    tang /= tl[:, None]
    left = np.column_stack([-tang[:, 1], tang[:, 0]])
    sign = np.where(curv >= 0, 1.0, -1.0)
    normal = left * sign[:, None]

    return CurveAnnotation(curv, normal, _inflections(curv, line.closed))


def _inflections(curv: np.ndarray, closed: bool) -> list:
    """Indices where the hysteresis-filtered curvature changes sign."""
    med = np.median(np.abs(curv))
    thr = max(0.25 * med, 1e-10)  # floor kills float dust on straight runs
    sig = np.where(curv > thr, 1, np.where(curv < -thr, -1, 0))

    # runs of >= 2 consecutive vertices of the same non-zero sign
    runs = []  # (start_index, sign, run_length)
    n = len(sig)
    idx = 0
    while idx < n:
        v = sig[idx]
        if v == 0:
            idx += 1
            continue
        j = idx
        while j < n and sig[j] == v:
            j += 1
        if j - idx >= 2:
            runs.append((idx, v))
        idx = j
    if closed and runs and len(runs) >= 2:
        # merge a wrap-around run split across the array boundary
        first, last = runs[0], runs[-1]
        if first[0] == 0 and sig[-1] == first[1] and last[1] == first[1]:
            runs = runs[:-1] if last != first else runs
    out = []
    for k in range(1, len(runs)):
        if runs[k][1] != runs[k - 1][1]:
            out.append(runs[k][0])
    if closed and len(runs) >= 2 and runs[0][1] != runs[-1][1]:
        out.append(runs[0][0])
    return sorted(set(out))
