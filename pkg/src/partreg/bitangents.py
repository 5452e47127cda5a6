"""Bitangent detection through the dual curve.

Each curve vertex maps to its tangent line u*x + v*y + 1 = 0 in the dual
(u, v) plane; two vertices sharing a tangent line map to the same dual point,
so bitangents show up as self-intersections of the polygonal dual curve,
found with a plane sweep over the dual segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDual
from .levellines import CurveAnnotation, LevelLine

MIN_VERTEX_GAP = 2        # crossings closer than this along the curve are noise
CONTACT_TOL = 2.0         # px, pre-refinement contact residual bound


@dataclass
class DualCurve:
    """Per-vertex dual points of a level line, with validity mask.

    `offset` is the translation that was subtracted from the source curve
    before dualizing (tangents through the origin have no dual point);
    `denom` holds the signed denominator per vertex — a sign change between
    consecutive vertices means the tangent line swept across the origin, so
    the dual path passes through infinity between them.
    """

    points: np.ndarray
    valid: np.ndarray
    offset: np.ndarray
    denom: np.ndarray


@dataclass
class Bitangent:
    """A line tangent to a level line at two vertices.

    `line` is (a, b, c) with a*x + b*y + c = 0 and a^2 + b^2 = 1.  The
    covered portion travels forward from vertex `i1` to vertex `i2` (wrapping
    for closed curves); `portion` holds its vertex indices in travel order.
    `inflection_length` counts inflections strictly inside the portion.
    """

    line: tuple
    i1: int
    i2: int
    p1: np.ndarray
    p2: np.ndarray
    portion: np.ndarray
    inflection_length: int
    crosses_curve: bool
    contact_residual: float
    contact_estimates: tuple | None = None  # pre-snap ellipse tangency points

    @property
    def endpoints(self):
        return self.p1, self.p2


def _tangents(pts: np.ndarray, closed: bool) -> np.ndarray:
    """Centered finite-difference tangent vectors (chords of neighbors)."""
    if closed:
        return np.roll(pts, -1, axis=0) - np.roll(pts, 1, axis=0)
    t = np.empty_like(pts)
    t[1:-1] = pts[2:] - pts[:-2]
    t[0] = pts[1] - pts[0]
    t[-1] = pts[-1] - pts[-2]
    return t


def dual_curve(line: LevelLine) -> DualCurve:
    """Dual points u = -dy/D, v = dx/D with D = dx*y - dy*x per vertex.

    The curve is first translated so its centroid sits at the origin; if some
    tangent still (nearly) passes through the origin, an extra diagonal offset
    of 0.37x the bounding-box diagonal is applied.  Residual invalid vertices
    are masked.
    """
    pts = line.points
    tan = _tangents(pts, line.closed)
    bbox = pts.max(0) - pts.min(0)
    diag = float(np.hypot(*bbox))
    if diag <= 0:
        raise DegenerateDual("degenerate curve extent")

    offset = pts.mean(0)
    for _ in range(4):
        q = pts - offset
        # D = dy*x - dx*y: the line through q with direction tan passes the
        # origin iff D = 0; then u*q_x + v*q_y = -1 as eq (3) requires
        denom = tan[:, 1] * q[:, 0] - tan[:, 0] * q[:, 1]
        scale = np.hypot(tan[:, 0], tan[:, 1]) * diag
        valid = np.abs(denom) > 1e-9 * np.maximum(scale, 1e-30)
        if valid.all():
            break
        offset = offset - 0.37 * diag
    if not valid.any():
        raise DegenerateDual("no valid dual points")

    u = np.zeros(len(pts))
    v = np.zeros(len(pts))
    np.divide(-tan[:, 1], denom, out=u, where=valid)
    np.divide(tan[:, 0], denom, out=v, where=valid)
    return DualCurve(np.column_stack([u, v]), valid, offset, denom)


def _pair_intersection(p1, p2, p3, p4):
    """Proper/touching intersection point of two segments, or None.

    Collinear overlapping segments report None (they encode the same
    tangent line in the dual).
    """
    d1 = p2 - p1
    d2 = p4 - p3
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if denom == 0.0:
        return None
    w = p3 - p1
    t = (w[0] * d2[1] - w[1] * d2[0]) / denom
    s = (w[0] * d1[1] - w[1] * d1[0]) / denom
    if -1e-12 <= t <= 1 + 1e-12 and -1e-12 <= s <= 1 + 1e-12:
        return p1 + t * d1
    return None


def sweep_intersections(segments) -> list:
    """All pairwise segment intersections by a plane sweep.

    Events are the x-sorted segment endpoints; each segment entering the
    sweep is tested against the whole active set (x-interval overlap is a
    necessary condition for intersection, so no crossing pair is missed).
    Returns [(point, (i, j)), ...] with i < j, each crossing pair exactly
    once, sorted by (x, y, i, j).
    """
    segs = np.asarray([(p[0][0], p[0][1], p[1][0], p[1][1]) for p in segments],
                      dtype=np.float64)
    if len(segs) == 0:
        return []
    x_lo = np.minimum(segs[:, 0], segs[:, 2])
    x_hi = np.maximum(segs[:, 0], segs[:, 2])
    events = sorted([(x_lo[i], 0, i) for i in range(len(segs))]
                    + [(x_hi[i], 1, i) for i in range(len(segs))])
    active: list = []
    hits = []
    for _, kind, i in events:
        if kind == 1:
            active.remove(i)
            continue
        p1, p2 = segs[i, :2], segs[i, 2:]
        for j in active:
            pt = _pair_intersection(p1, p2, segs[j, :2], segs[j, 2:])
            if pt is not None:
                hits.append(((float(pt[0]), float(pt[1])),
                             (min(i, j), max(i, j))))
        active.append(i)
    hits.sort(key=lambda h: (h[0][0], h[0][1], h[1]))
    return hits


def _count_inflections(indices, inflections):
    idx = set(int(k) for k in indices[1:-1])  # contacts do not count
    return sum(1 for k in inflections if k in idx)


def _normalize_line(a, b, c):
    """Scale (a, b, c) so a^2 + b^2 = 1 with a deterministic sign."""
    norm = np.hypot(a, b)
    if norm == 0:
        return None
    a, b, c = a / norm, b / norm, c / norm
    if a < 0 or (a == 0 and b < 0):
        a, b, c = -a, -b, -c
    return (float(a), float(b), float(c))


def _line_from_dual(cross_pt, offset):
    """Tangent line encoded by a dual-plane point, back in image coords.

    u*x' + v*y' + 1 = 0 with x' = x - ox, y' = y - oy.
    """
    u, v = cross_pt
    return _normalize_line(u, v, 1.0 - u * offset[0] - v * offset[1])


def _segment_crosses_polyline(p1, p2, pts) -> bool:
    """True if the open segment p1-p2 crosses the polyline strictly between
    its endpoints (contact neighbourhoods excluded by the open t-interval)."""
    a = pts[:-1]
    b = pts[1:]
    d = p2 - p1
    e = b - a
    w = a - p1
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    ok = denom != 0
    t = np.zeros(len(a))
    s = np.zeros(len(a))
    t[ok] = (w[ok, 0] * e[ok, 1] - w[ok, 1] * e[ok, 0]) / denom[ok]
    s[ok] = (w[ok, 0] * d[1] - w[ok, 1] * d[0]) / denom[ok]
    crossing = ok & (t > 1e-6) & (t < 1 - 1e-6) & (s > 1e-6) & (s < 1 - 1e-6)
    return bool(crossing.any())


def candidate_bitangents(line: LevelLine, annotation: CurveAnnotation) -> list:
    """One Bitangent per dual self-intersection.

    Endpoints are the source vertices nearest (in the dual plane) to the
    crossing on each of the two crossing dual segments; crossings whose
    endpoints are within MIN_VERTEX_GAP of each other along the curve are
    tangent-line noise and dropped, as are crossings of segments sharing a
    vertex.
    """
    dual = dual_curve(line)
    pts = line.points
    n = len(pts)
    dp = dual.points
    ok = dual.valid

    seg_src = []     # dual segment -> source vertex index of its start
    segments = []
    last = n - 1 if not line.closed else n
    for k in range(last):
        k2 = (k + 1) % n
        # same-sign denominators: the dual path between the two vertices
        # stays finite (no tangent line through the origin in between)
        if ok[k] and ok[k2] and dual.denom[k] * dual.denom[k2] > 0:
            segments.append((dp[k], dp[k2]))
            seg_src.append(k)
    if not segments:
        raise DegenerateDual("no dual segments")

    out = []
    for (ux, vy), (si, sj) in sweep_intersections(segments):
        k1, k2 = seg_src[si], seg_src[sj]
        if k1 == k2:
            continue
        # adjacent dual segments always touch at their shared vertex
        if (abs(k1 - k2) <= 1 or (line.closed and abs(k1 - k2) == n - 1)):
            continue
        cross_pt = np.array([ux, vy])

        def nearest_vertex(k):
            kk2 = (k + 1) % n
            d0 = np.hypot(*(dp[k] - cross_pt))
            d1 = np.hypot(*(dp[kk2] - cross_pt))
            return k if d0 <= d1 else kk2

        ia, ib = nearest_vertex(k1), nearest_vertex(k2)
        if ia == ib:
            continue
        lo, hi = min(ia, ib), max(ia, ib)
        gap = hi - lo
        if line.closed:
            gap = min(gap, n - gap)
        if gap <= MIN_VERTEX_GAP:
            continue

        lineq = _line_from_dual(cross_pt, dual.offset)
        if lineq is None:
            continue
        a, b, c = lineq
        resid = max(abs(a * pts[lo][0] + b * pts[lo][1] + c),
                    abs(a * pts[hi][0] + b * pts[hi][1] + c))
        if resid >= CONTACT_TOL:
            continue

        idx = _covered_portion(line, lo, hi, lineq)
        infl = _count_inflections(idx, annotation.inflection_indices)
        crosses = _segment_crosses_polyline(pts[idx[0]], pts[idx[-1]],
                                            pts[idx])
        out.append(Bitangent(lineq, int(idx[0]), int(idx[-1]),
                             pts[idx[0]].copy(), pts[idx[-1]].copy(),
                             idx, infl, crosses, float(resid)))
    out.sort(key=lambda bt: (bt.i1, bt.i2))
    return _dedupe(out)


def _covered_portion(line: LevelLine, lo: int, hi: int, lineq) -> np.ndarray:
    """Covered portion between two contact vertices, in travel order.

    For closed curves: the arc with fewer transversal crossings of the
    bitangent line (the arc the line does not cut through), shorter arc on
    ties.  The returned index array starts at b1 and ends at b2.
    """
    n = len(line.points)
    direct = np.arange(lo, hi + 1)
    if not line.closed:
        return direct
    wrap = np.concatenate([np.arange(hi, n), np.arange(0, lo + 1)])
    a, b, c = lineq
    pts = line.points

    def crossings(idx):
        vals = a * pts[idx, 0] + b * pts[idx, 1] + c
        sig = np.sign(vals[np.abs(vals) > 0.25])
        return int(np.count_nonzero(np.diff(sig) != 0))

    cd, cw = crossings(direct), crossings(wrap)
    if cd != cw:
        return direct if cd < cw else wrap
    return direct if len(direct) <= len(wrap) else wrap


def _dedupe(bts: list) -> list:
    """Drop repeated contact pairs (e.g. both sweep reports of a tritangent)."""
    seen = set()
    out = []
    for bt in bts:
        key = (min(bt.i1, bt.i2), max(bt.i1, bt.i2))
        if key in seen:
            continue
        seen.add(key)
        out.append(bt)
    return out
