"""Projective canonical frames and canonical curves.

A refined bitangent contributes its two contact points b1, b2; two cast
points c1, c2 (contacts of tangents to the covered portion drawn from b1
and b2) complete a four-point frame.  Mapping the frame to the unit square
by a homography and projecting the covered portion yields a canonical curve
that only depends on the shape, not on the viewpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitangents import Bitangent
from .errors import DegenerateFrame, NearInfinityPoint, NoFrame
from .levellines import CurveAnnotation, LevelLine

MAX_FRAMES = 3
CANONICAL_POINTS = 64
UNIT_SQUARE = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]])


@dataclass
class Frame:
    """Four invariant points (b1, c1, c2, b2) with portion indices."""

    b1: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    b2: np.ndarray
    quality: float
    ib1: int = -1
    ic1: int = -1
    ic2: int = -1
    ib2: int = -1

    def points(self) -> np.ndarray:
        return np.array([self.b1, self.c1, self.c2, self.b2])


@dataclass
class CanonicalCurve:
    """Portion projected into the unit square, resampled by arc length."""

    points: np.ndarray
    source: tuple = ()


def _unit_tangents(pts: np.ndarray) -> np.ndarray:
    t = np.empty_like(pts)
    t[1:-1] = pts[2:] - pts[:-2]
    t[0] = pts[1] - pts[0]
    t[-1] = pts[-1] - pts[-2]
    n = np.hypot(t[:, 0], t[:, 1])
    n[n == 0] = 1.0
    return t / n[:, None]


def cast_points(line: LevelLine, annotation: CurveAnnotation,
                bt: Bitangent) -> tuple[list, list]:
    """Cast-point candidates for each bitangent endpoint.

    A cast point for b1 is a portion vertex whose tangent line passes
    through b1, found where the signed distance from b1 to the running
    tangent line changes sign.  A margin of 3 vertices around each endpoint
    is excluded (the tangent at b1 passes through b1 trivially).
    """
    portion = bt.portion
    pts = line.points[portion]
    if len(pts) < 8:
        raise NoFrame("covered portion too short")
    tang = _unit_tangents(pts)
    margin = 3

    def scan(target):
        # f(k) = cross(t_k, target - p_k): zero when the tangent at p_k
        # passes through the target point
        rel = target - pts
        f = tang[:, 0] * rel[:, 1] - tang[:, 1] * rel[:, 0]
        inner = slice(margin, len(pts) - margin)
        idx = np.arange(len(pts))[inner]
        fi = f[inner]
        sign_change = np.nonzero(np.diff(np.sign(fi)) != 0)[0]
        out = []
        for k in sign_change:
            a, b = idx[k], idx[k + 1]
            out.append(int(a if abs(f[a]) <= abs(f[b]) else b))
        return out

    c1s = scan(pts[0])
    c2s = scan(pts[-1])
    if not c1s or not c2s:
        raise NoFrame("no cast point for an endpoint")
    return ([int(portion[k]) for k in c1s], [int(portion[k]) for k in c2s])


def _convex(quad: np.ndarray) -> bool:
    """Strict convexity of the polygon b1, c1, c2, b2 (no collinear triple)."""
    crosses = []
    for k in range(4):
        a = quad[(k + 1) % 4] - quad[k]
        b = quad[(k + 2) % 4] - quad[(k + 1) % 4]
        crosses.append(a[0] * b[1] - a[1] * b[0])
    crosses = np.array(crosses)
    scale = np.abs(quad).max() ** 2 + 1.0
    if np.any(np.abs(crosses) < 1e-9 * scale):
        return False
    return bool(np.all(crosses > 0) or np.all(crosses < 0))


def build_frames(line: LevelLine, bt: Bitangent, c1s, c2s,
                 max_frames: int = MAX_FRAMES) -> list[Frame]:
    """All convex (b1, c1, c2, b2) combinations, best quality first.

    quality = sin(angle between bitangent and cast tangent 1)
            * sin(angle between bitangent and cast tangent 2)
            * |c1 - c2| / |b1 - b2|,
    which favours wide frames and penalizes collapsed cast points.
    """
    pts = line.points
    b1, b2 = pts[bt.i1], pts[bt.i2]
    bdir = b2 - b1
    bnorm = np.hypot(*bdir)
    if bnorm == 0:
        raise NoFrame("coincident bitangent endpoints")
    bdir = bdir / bnorm

    portion_tangents = _unit_tangents(pts[bt.portion])
    pos_in_portion = {int(v): k for k, v in enumerate(bt.portion)}

    frames = []
    for ic1 in c1s:
        for ic2 in c2s:
            if ic1 == ic2:
                continue
            c1, c2 = pts[ic1], pts[ic2]
            quad = np.array([b1, c1, c2, b2])
            if not _convex(quad):
                continue
            t1 = portion_tangents[pos_in_portion[ic1]]
            t2 = portion_tangents[pos_in_portion[ic2]]
            s1 = abs(bdir[0] * t1[1] - bdir[1] * t1[0])
            s2 = abs(bdir[0] * t2[1] - bdir[1] * t2[0])
            q = s1 * s2 * (np.hypot(*(c1 - c2)) / bnorm)
            frames.append(Frame(b1.copy(), c1.copy(), c2.copy(), b2.copy(),
                                float(q), bt.i1, ic1, ic2, bt.i2))
    if not frames:
        raise NoFrame("no convex frame combination")
    frames.sort(key=lambda f: -f.quality)
    return frames[:max_frames]


def homography_dlt(src, dst) -> np.ndarray:
    """Homography mapping 4 source points to 4 destination points.

    Hartley normalization (translate to centroid, scale to mean distance
    sqrt(2)) on both sets, smallest-singular-vector solution of the 8x9
    system, unnormalized and scaled so H[2, 2] = 1.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("need exactly 4 source and 4 destination points")
    for pts in (src, dst):
        if _has_collinear_triple(pts):
            raise DegenerateFrame("three points are collinear")

    t_src, src_n = _hartley(src)
    t_dst, dst_n = _hartley(dst)

    rows = []
    for (x, y), (u, v) in zip(src_n, dst_n):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, vt = np.linalg.svd(np.asarray(rows))
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h @ t_src
    if abs(h[2, 2]) < 1e-15 or abs(np.linalg.det(h)) < 1e-12 * np.abs(h).max() ** 3:
        raise DegenerateFrame("singular homography")
    return h / h[2, 2]


def _hartley(pts: np.ndarray):
    mean = pts.mean(0)
    d = np.hypot(*(pts - mean).T).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    t = np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])
    q = (pts - mean) * s
    return t, q


def _has_collinear_triple(pts: np.ndarray) -> bool:
    scale = np.abs(pts - pts.mean(0)).max() ** 2 + 1e-30
    for i in range(4):
        for j in range(i + 1, 4):
            for k in range(j + 1, 4):
                a = pts[j] - pts[i]
                b = pts[k] - pts[i]
                if abs(a[0] * b[1] - a[1] * b[0]) < 1e-9 * scale:
                    return True
    return False


def apply_homography(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Map points through h with homogeneous division.

    Raises NearInfinityPoint when the input crosses the vanishing line
    (|w| below tolerance or w changing sign).
    """
    pts = np.asarray(pts, dtype=np.float64)
    w = h[2, 0] * pts[:, 0] + h[2, 1] * pts[:, 1] + h[2, 2]
    if np.any(np.abs(w) < 1e-9):
        raise NearInfinityPoint("point maps to infinity")
    if np.any(w > 0) and np.any(w < 0):
        raise NearInfinityPoint("portion crosses the vanishing line")
    x = (h[0, 0] * pts[:, 0] + h[0, 1] * pts[:, 1] + h[0, 2]) / w
    y = (h[1, 0] * pts[:, 0] + h[1, 1] * pts[:, 1] + h[1, 2]) / w
    return np.column_stack([x, y])


def _resample_exact(pts: np.ndarray, n: int) -> np.ndarray:
    """Arc-length resample keeping the end points exactly."""
    seg = np.diff(pts, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    if cum[-1] <= 0:
        raise DegenerateFrame("zero-length portion")
    t = np.linspace(0.0, cum[-1], n)
    out = np.column_stack([np.interp(t, cum, pts[:, 0]),
                           np.interp(t, cum, pts[:, 1])])
    out[0], out[-1] = pts[0], pts[-1]
    return out


def canonical_curve(portion_points, frame: Frame,
                    n_points: int = CANONICAL_POINTS,
                    source: tuple = ()) -> CanonicalCurve:
    """Project the covered portion into the unit square and resample.

    Frame points map exactly: b1 -> (0,0), c1 -> (0,1), c2 -> (1,1),
    b2 -> (1,0); the portion follows through the same homography.
    """
    h = homography_dlt(frame.points(), UNIT_SQUARE)
    mapped = apply_homography(h, np.asarray(portion_points, dtype=np.float64))
    # endpoints are b1 and b2; pin them to their exact images
    mapped[0] = UNIT_SQUARE[0]
    mapped[-1] = UNIT_SQUARE[3]
    return CanonicalCurve(_resample_exact(mapped, n_points), source)
