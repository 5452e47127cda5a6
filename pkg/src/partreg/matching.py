"""Canonical-curve matching and robust global affine estimation.

Shape elements are compared with the discrete Fréchet distance in both
orientations; matches below a threshold feed frame-point correspondences
into a seeded RANSAC that returns one global 2x3 affine map.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (ConsensusFailed, DegenerateCorrespondences, EmptyCurve)
from .frames import CanonicalCurve, Frame

MATCH_THRESHOLD = 0.15
BAND_SLACK = 2
MIN_LEN = 6
MAX_LEN = 10
RANSAC_ITERATIONS = 2000
RANSAC_INLIER_TOL = 5.0
RANSAC_MIN_INLIERS = 3


@dataclass
class ShapeElement:
    """A canonical curve with its source frame and bookkeeping ids."""

    canonical: CanonicalCurve
    frame: Frame
    inflection_length: int
    image_id: str = ""
    level: float = 0.0
    line_index: int = 0
    element_id: int = 0

    def frame_points(self) -> np.ndarray:
        return self.frame.points()


@dataclass
class Match:
    """A part element paired with a whole element."""

    part: ShapeElement
    whole: ShapeElement
    distance: float
    flipped: bool


def discrete_frechet(p, q) -> float:
    """Discrete Fréchet distance between two vertex sequences."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if len(p) == 0 or len(q) == 0:
        raise EmptyCurve("cannot compare an empty curve")
    return float(_frechet_table(cdist(p, q))[-1, -1])


def _frechet_table(d: np.ndarray) -> np.ndarray:
    n, m = d.shape
    t = np.empty((n, m))
    t[0, 0] = d[0, 0]
    for i in range(1, n):
        t[i, 0] = max(t[i - 1, 0], d[i, 0])
    for j in range(1, m):
        t[0, j] = max(t[0, j - 1], d[0, j])
    for i in range(1, n):
        row = t[i]
        prev = t[i - 1]
        for j in range(1, m):
            row[j] = max(min(prev[j], prev[j - 1], row[j - 1]), d[i, j])
    return t


def _batched_frechet(p_stack: np.ndarray, q_stack: np.ndarray) -> np.ndarray:
    """Fréchet distances of K curve pairs at once (same vertex counts).

    The row sweep runs the (i, j) recurrence vectorized over the batch, so
    the Python-level work is n*m steps regardless of K.
    """
    k, n, _ = p_stack.shape
    m = q_stack.shape[1]
    d = np.sqrt(((p_stack[:, :, None, :] - q_stack[:, None, :, :]) ** 2
                 ).sum(-1))
    prev = np.empty((k, m))
    prev[:, 0] = d[:, 0, 0]
    for j in range(1, m):
        prev[:, j] = np.maximum(prev[:, j - 1], d[:, 0, j])
    cur = np.empty((k, m))
    for i in range(1, n):
        di = d[:, i, :]
        cur[:, 0] = np.maximum(prev[:, 0], di[:, 0])
        for j in range(1, m):
            step = np.minimum(np.minimum(prev[:, j], prev[:, j - 1]),
                              cur[:, j - 1])
            cur[:, j] = np.maximum(step, di[:, j])
        prev, cur = cur, prev
    return prev[:, -1].copy()


def free_space_reachable(p, q, delta: float):
    """Reachable free space of two curves at distance parameter delta.

    Cell (i, j) is reachable when d(p_i, q_j) <= delta and a monotone path
    from (0, 0) gets there.  Returns (grid, path): the boolean reachability
    grid and a monotone vertex path to the top-right corner when one exists
    (None otherwise).  Top-right reachability is equivalent to
    discrete_frechet(p, q) <= delta.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if len(p) == 0 or len(q) == 0:
        raise EmptyCurve("cannot compare an empty curve")
    free = cdist(p, q) <= delta
    n, m = free.shape
    reach = np.zeros((n, m), dtype=bool)
    reach[0, 0] = free[0, 0]
    for i in range(n):
        for j in range(m):
            if not free[i, j] or (i == 0 and j == 0):
                continue
            reach[i, j] = ((i > 0 and reach[i - 1, j])
                           or (j > 0 and reach[i, j - 1])
                           or (i > 0 and j > 0 and reach[i - 1, j - 1]))
    if not reach[-1, -1]:
        return reach, None
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        if i > 0 and j > 0 and reach[i - 1, j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and reach[i - 1, j]:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    return reach, path[::-1]


def reversed_canonical(points: np.ndarray) -> np.ndarray:
    """Canonical curve of the reversed portion with swapped frame roles.

    Swapping b1<->b2 and c1<->c2 mirrors the unit square across x = 1/2, so
    the reversed canonical curve is (1 - x, y) in reversed vertex order.
    """
    out = points[::-1].copy()
    out[:, 0] = 1.0 - out[:, 0]
    return out


def _band_compatible(a: ShapeElement, b: ShapeElement, slack: int) -> bool:
    return abs(a.inflection_length - b.inflection_length) <= slack


def match_elements(part, whole, threshold: float = MATCH_THRESHOLD,
                   band_slack: int = BAND_SLACK) -> list[Match]:
    """Cross-compare shape elements and keep per-line best matches.

    Every admissible pair (inflection counts within band_slack) is compared
    in both orientations; for each part element and each whole level line,
    only the minimum-distance pairing below the threshold survives.
    Output ordered by (part element id, distance).
    """
    if not part or not whole:
        return []
    whole_flat = np.concatenate([w.canonical.points for w in whole])
    n_cc = len(whole[0].canonical.points)
    part_keys = sorted(range(len(part)), key=lambda k: part[k].element_id)
    probe = np.linspace(0, n_cc - 1, 9).astype(int)

    # screen every (part, whole, orientation) triple, then evaluate the
    # survivors' exact distances in one vectorized batch
    jobs = []     # (part key, whole key, flipped)
    for pk in part_keys:
        pe = part[pk]
        fwd = pe.canonical.points
        rev = reversed_canonical(fwd)
        # for a few part vertices, the distance to the nearest whole vertex
        # is a lower bound of the Fréchet distance (max over a vertex subset
        # only weakens the bound, never invalidates it)
        d = cdist(np.vstack([fwd[probe], rev[probe]]), whole_flat)
        d = d.reshape(2, len(probe), len(whole), n_cc)
        bound = d.min(3).max(1)  # (2, n_whole)
        for wk, we in enumerate(whole):
            if not _band_compatible(pe, we, band_slack):
                continue
            if bound[0, wk] <= threshold:
                jobs.append((pk, wk, False))
            if bound[1, wk] <= threshold:
                jobs.append((pk, wk, True))

    best = {}
    chunk = 4096
    for lo in range(0, len(jobs), chunk):
        batch = jobs[lo:lo + chunk]
        p_stack = np.stack([
            reversed_canonical(part[pk].canonical.points) if flipped
            else part[pk].canonical.points for pk, _, flipped in batch])
        q_stack = np.stack([whole[wk].canonical.points
                            for _, wk, _ in batch])
        dists = _batched_frechet(p_stack, q_stack)
        for (pk, wk, flipped), dist in zip(batch, dists):
            if dist > threshold:
                continue
            pe, we = part[pk], whole[wk]
            key = (pe.element_id, we.image_id, we.level, we.line_index)
            cur = best.get(key)
            if cur is None or (dist, flipped) < (cur[0], cur[1]):
                best[key] = (float(dist), flipped, pe, we)
    matches = [Match(pe, we, float(dist), flipped)
               for (dist, flipped, pe, we) in best.values()]
    matches.sort(key=lambda m: (m.part.element_id, m.distance,
                                m.whole.element_id))
    return matches


def match_correspondences(match: Match) -> tuple[np.ndarray, np.ndarray]:
    """The 3 point correspondences a match contributes: b1, b2 and the
    wider-angle cast point.  Orientation flips swap the part frame roles."""
    wf = match.whole.frame
    pf = match.part.frame
    if match.flipped:
        part_pts = np.array([pf.b2, pf.b1, pf.c2, pf.c1])
    else:
        part_pts = np.array([pf.b1, pf.b2, pf.c1, pf.c2])
    whole_pts = np.array([wf.b1, wf.b2, wf.c1, wf.c2])
    # the cast point farther from the bitangent conditions the solve best
    bdir = wf.b2 - wf.b1
    norm = np.hypot(*bdir)
    bdir = bdir / norm if norm > 0 else bdir

    def off_line(p):
        rel = p - wf.b1
        return abs(bdir[0] * rel[1] - bdir[1] * rel[0])

    pick = 2 if off_line(wf.c1) >= off_line(wf.c2) else 3
    idx = [0, 1, pick]
    return part_pts[idx], whole_pts[idx]


def affine_from_correspondences(src, dst) -> np.ndarray:
    """Least-squares 2x3 affine mapping src points onto dst points."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 3 or len(src) != len(dst):
        raise DegenerateCorrespondences("need at least 3 point pairs")
    centered = src - src.mean(0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] < 1e-9 * (sv[0] + 1e-30):
        raise DegenerateCorrespondences("source points are collinear")
    design = np.hstack([src, np.ones((len(src), 1))])
    coef, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return coef.T  # 2x3


def apply_affine(t: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ t[:, :2].T + t[:, 2]


def _match_content_key(match: Match) -> str:
    payload = np.round(np.concatenate([
        match.part.frame_points().ravel(),
        match.whole.frame_points().ravel(),
        [match.distance, float(match.flipped)],
    ]), 6).tobytes()
    return hashlib.sha256(payload).hexdigest()


@dataclass
class RansacParams:
    iterations: int = RANSAC_ITERATIONS
    inlier_tol_px: float = RANSAC_INLIER_TOL
    min_inliers: int = RANSAC_MIN_INLIERS
    seed: int = 0


def ransac_affine(matches, params: RansacParams):
    """Seeded RANSAC over matches; each hypothesis is one match's 3 pairs.

    Consensus counts matches whose all 3 correspondences reproject within
    the tolerance.  The final transform is re-estimated by least squares on
    every inlier correspondence.  The sample schedule is keyed by a content
    hash of the match set, so the result is independent of input order.
    Returns (2x3 affine, sorted inlier indices into `matches`).
    """
    if not matches:
        raise ConsensusFailed("no matches to sample")
    order = sorted(range(len(matches)),
                   key=lambda k: _match_content_key(matches[k]))
    pairs = [match_correspondences(matches[k]) for k in order]
    src = np.stack([p for p, _ in pairs])   # (n, 3, 2)
    dst = np.stack([d for _, d in pairs])

    rng = np.random.default_rng(params.seed)
    n = len(order)
    best = None
    for _ in range(params.iterations):
        k = int(rng.integers(n))
        try:
            t = affine_from_correspondences(src[k], dst[k])
        except DegenerateCorrespondences:
            continue
        proj = src @ t[:, :2].T + t[:, 2]
        err = np.sqrt(((proj - dst) ** 2).sum(-1)).max(1)
        inliers = err <= params.inlier_tol_px
        count = int(inliers.sum())
        score = (count, -float(err[inliers].sum()) if count else 0.0)
        if best is None or score > best[0]:
            best = (score, inliers.copy())
    if best is None or best[0][0] < params.min_inliers:
        raise ConsensusFailed(
            f"best consensus {0 if best is None else best[0][0]} "
            f"< {params.min_inliers}")

    inliers = best[1]
    t = affine_from_correspondences(src[inliers].reshape(-1, 2),
                                    dst[inliers].reshape(-1, 2))
    if abs(np.linalg.det(t[:, :2])) < 1e-9:
        raise ConsensusFailed("refitted transform is singular")
    inlier_indices = sorted(order[k] for k in np.nonzero(inliers)[0])
    return t, inlier_indices
