"""Ellipse fitting, ellipse-pair bitangents, and bitangent refinement.

Coefficients follow the ordering a*x^2 + b*y^2 + c*xy + d*x + e*y + f.  The
pair-bitangent solver hides the slope u in the coefficient field of the
two tangency conditions, rewrites the extended system as a quadratic matrix
polynomial and solves its 8x8 companion linearization as a generalized
eigenvalue problem; intercepts come from the eigenvectors, falling back to
the common roots of the two intercept quadratics at multiple eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (DegenerateFit, FitFailed, NoBitangents, SelectionFailed,
                     StraightEdge)
from .bitangents import (Bitangent, _count_inflections, _covered_portion,
                         _normalize_line, _segment_crosses_polyline)
from .levellines import CurveAnnotation, LevelLine

FIT_WINDOW = 15              # vertices each side of a contact
STRAIGHT_RMS = 0.1           # px, line-fit residual below which we reject
MERGE_RADIUS = 3.0           # px, endpoint distance for pruning duplicates
REFINED_CONTACT_TOL = 0.5    # px
EIG_IMAG_TOL = 1e-8          # |imag| < tol * (1 + |real|) counts as real
VERTICAL_SLOPE = 50.0


@dataclass
class Conic:
    """General conic a*x^2 + b*y^2 + c*xy + d*x + e*y + f = 0, unit norm."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self):
        v = self.vector()
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("zero conic")
        # fix sign so the quadratic part is positive definite for ellipses
        s = 1.0 if self.a + self.b >= 0 else -1.0
        self.a, self.b, self.c, self.d, self.e, self.f = tuple(s * v / n)

    def vector(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.e, self.f])

    @property
    def is_ellipse(self) -> bool:
        return 4 * self.a * self.b - self.c ** 2 > 0

    def evaluate(self, pts) -> np.ndarray:
        x, y = np.asarray(pts)[..., 0], np.asarray(pts)[..., 1]
        return (self.a * x * x + self.b * y * y + self.c * x * y
                + self.d * x + self.e * y + self.f)

    @property
    def center(self) -> np.ndarray:
        det = 4 * self.a * self.b - self.c ** 2
        cx = (self.c * self.e - 2 * self.b * self.d) / det
        cy = (self.c * self.d - 2 * self.a * self.e) / det
        return np.array([cx, cy])

    @property
    def semi_axes(self):
        """(major, minor) semi-axis lengths."""
        cx, cy = self.center
        # constant term after recentering
        f0 = self.f + 0.5 * (self.d * cx + self.e * cy)
        q = np.array([[self.a, self.c / 2], [self.c / 2, self.b]])
        ev = np.linalg.eigvalsh(q)
        if np.any(ev <= 0) or f0 >= 0:
            return (np.nan, np.nan)
        axes = np.sqrt(-f0 / ev)
        return (float(axes.max()), float(axes.min()))

    @property
    def angle(self) -> float:
        """Rotation of the major axis, radians in (-pi/2, pi/2]."""
        q = np.array([[self.a, self.c / 2], [self.c / 2, self.b]])
        ev, evec = np.linalg.eigh(q)
        major = evec[:, 0]  # smallest eigenvalue -> longest axis
        ang = np.arctan2(major[1], major[0])
        if ang <= -np.pi / 2:
            ang += np.pi
        elif ang > np.pi / 2:
            ang -= np.pi
        return float(ang)

    def transformed(self, swap_xy=False) -> "Conic":
        if swap_xy:
            return Conic(self.b, self.a, self.c, self.e, self.d, self.f)
        return self


@dataclass
class BitangentTypeLabel:
    """Cyclic-order label of an ellipse-pair bitangent."""

    kind: str        # one of LL, LR, RL, RR
    external: bool


def fit_ellipse(points) -> Conic:
    """Direct least-squares ellipse fit.

    Design rows [x^2, y^2, xy, x, y, 1]; the constraint 4ab - c^2 = 1 keeps
    the quadratic part elliptic, turning the normal equations into the
    generalized eigenproblem  S a = lambda C a  whose admissible eigenpair
    (finite lambda, elliptic eigenvector, minimal residual) is the fit.
    Coordinates are centered and scaled before solving for conditioning.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 6 or pts.shape[1] != 2:
        raise DegenerateFit("need at least 6 two-dimensional points")

    mean = pts.mean(0)
    q = pts - mean
    scale = np.sqrt((q ** 2).sum(1).mean())
    if scale <= 0:
        raise DegenerateFit("coincident points")
    # collinearity guard: smallest singular value of centered cloud
    sv = np.linalg.svd(q, compute_uv=False)
    if sv[-1] < 1e-9 * sv[0]:
        raise DegenerateFit("near-collinear points")
    q /= scale

    x, y = q[:, 0], q[:, 1]
    design = np.column_stack([x * x, y * y, x * y, x, y, np.ones_like(x)])
    scatter = design.T @ design
    constraint = np.zeros((6, 6))
    constraint[0, 1] = constraint[1, 0] = 2.0
    constraint[2, 2] = -1.0

    w, vecs = scipy.linalg.eig(scatter, constraint)
    best = None
    for k in range(6):
        lam = w[k]
        if not np.isfinite(lam.real) or abs(lam.imag) > 1e-8 * (1 + abs(lam.real)):
            continue
        a = np.real(vecs[:, k])
        if 4 * a[0] * a[1] - a[2] ** 2 <= 0:
            continue
        resid = float(a @ scatter @ a) / float(a @ a)
        if lam.real < -1e-6 * resid - 1e-12:
            continue
        if best is None or resid < best[0]:
            best = (resid, a)
    if best is None:
        raise FitFailed("no admissible generalized eigenpair")

    return _denormalize_conic(best[1], mean, scale)


def _denormalize_conic(a, mean, scale) -> Conic:
    """Map conic coefficients from centered/scaled coords back to image."""
    s = scale
    mx, my = mean
    A, B, C, D, E, F = a
    # substitute x -> (x - mx)/s, y -> (y - my)/s
    a2 = A / s ** 2
    b2 = B / s ** 2
    c2 = C / s ** 2
    d2 = (-2 * A * mx - C * my) / s ** 2 + D / s
    e2 = (-2 * B * my - C * mx) / s ** 2 + E / s
    f2 = (A * mx ** 2 + B * my ** 2 + C * mx * my) / s ** 2 \
        - (D * mx + E * my) / s + F
    return Conic(a2, b2, c2, d2, e2, f2)


def _tangency_coeffs(conic: Conic) -> np.ndarray:
    """Coefficients of the tangency condition of y = u*x + v with the conic.

    Substituting the line and forcing a double root gives
    alpha1*u^2 + alpha2*v^2 + alpha3*u*v + alpha4*u + alpha5*v + alpha6 = 0.
    """
    a, b, c, d, e, f = conic.vector()
    return np.array([
        e * e - 4 * b * f,          # u^2
        c * c - 4 * a * b,          # v^2
        4 * b * d - 2 * c * e,      # uv
        2 * d * e - 4 * c * f,      # u
        2 * c * d - 4 * a * e,      # v
        d * d - 4 * a * f,          # 1
    ])


def pair_bitangent_eigenvalues(e1: Conic, e2: Conic) -> np.ndarray:
    """Finite eigenvalues of the companion pencil (candidate slopes u)."""
    al1 = _tangency_coeffs(e1)
    al2 = _tangency_coeffs(e2)
    c2 = np.zeros((4, 4))
    c2[0, 2] = c2[1, 3] = al1[0]
    c2[2, 2] = c2[3, 3] = al2[0]
    c1 = np.zeros((4, 4))
    c1[0, 1], c1[0, 2] = al1[2], al1[3]
    c1[1, 2], c1[1, 3] = al1[2], al1[3]
    c1[2, 1], c1[2, 2] = al2[2], al2[3]
    c1[3, 2], c1[3, 3] = al2[2], al2[3]
    c0 = np.zeros((4, 4))
    c0[0, 0], c0[0, 1], c0[0, 2] = al1[1], al1[4], al1[5]
    c0[1, 1], c0[1, 2], c0[1, 3] = al1[1], al1[4], al1[5]
    c0[2, 0], c0[2, 1], c0[2, 2] = al2[1], al2[4], al2[5]
    c0[3, 1], c0[3, 2], c0[3, 3] = al2[1], al2[4], al2[5]

    top = np.hstack([np.zeros((4, 4)), np.eye(4)])
    bottom = np.hstack([-c0, -c1])
    amat = np.vstack([top, bottom])
    bmat = np.zeros((8, 8))
    bmat[:4, :4] = np.eye(4)
    bmat[4:, 4:] = c2

    w = scipy.linalg.eigvals(amat, bmat)
    return w[np.isfinite(w)]


def _intercepts_for_slope(u: float, al1, al2, tol=1e-6):
    """Common roots v of the two tangency quadratics at slope u."""
    def quad(al):
        return (al[1], al[2] * u + al[4],
                al[0] * u * u + al[3] * u + al[5])

    def roots(coef):
        a, b, c = coef
        if abs(a) < 1e-14 * (abs(b) + abs(c) + 1e-30):
            return [] if abs(b) < 1e-14 else [-c / b]
        disc = b * b - 4 * a * c
        if disc < -tol * (b * b + abs(4 * a * c)):
            return []
        disc = max(disc, 0.0)
        return [(-b + np.sqrt(disc)) / (2 * a), (-b - np.sqrt(disc)) / (2 * a)]

    r1, r2 = roots(quad(al1)), roots(quad(al2))
    scale = 1 + max((abs(v) for v in r1 + r2), default=0.0)
    out = []
    for v1 in r1:
        for v2 in r2:
            if abs(v1 - v2) < 1e-5 * scale:
                out.append(0.5 * (v1 + v2))
    return out


def _tangency_point(conic: Conic, line) -> np.ndarray:
    """Contact point of a tangent line with the conic (double-root point)."""
    a, b, c = line
    # parametrize the line by its direction, offset from the foot point
    foot = np.array([-a * c, -b * c])
    direction = np.array([-b, a])
    A, B, C, D, E, F = conic.vector()
    x0, y0 = foot
    dx, dy = direction
    qa = A * dx * dx + B * dy * dy + C * dx * dy
    qb = (2 * A * x0 * dx + 2 * B * y0 * dy + C * (x0 * dy + y0 * dx)
          + D * dx + E * dy)
    if abs(qa) < 1e-15:
        return foot if abs(qb) < 1e-15 else foot - (conic.evaluate(foot) / qb) * direction
    t = -qb / (2 * qa)
    return foot + t * direction


def _line_from_uv(u, v, swapped):
    if swapped:
        # x = u*y + v  ->  x - u*y - v = 0
        return _normalize_line(1.0, -u, -v)
    return _normalize_line(u, -1.0, v)


def ellipse_pair_bitangents(e1: Conic, e2: Conic):
    """The (up to 4) common tangent lines of two ellipses, with labels.

    Solves the companion-pencil eigenproblem in both coordinate orientations
    (the slope-intercept form cannot express vertical lines) and merges the
    results.  Complex eigenvalue pairs (two-point-intersecting ellipses)
    disappear on their own: only real slopes yield lines.
    Returns [(line, BitangentTypeLabel), ...].
    """
    if not (e1.is_ellipse and e2.is_ellipse):
        raise NoBitangents("both conics must be ellipses")

    lines = []
    for swapped in (False, True):
        f1, f2 = e1.transformed(swapped), e2.transformed(swapped)
        al1, al2 = _tangency_coeffs(f1), _tangency_coeffs(f2)
        try:
            w = pair_bitangent_eigenvalues(f1, f2)
        except scipy.linalg.LinAlgError:
            continue
        real = [x.real for x in w
                if abs(x.imag) <= EIG_IMAG_TOL * (1 + abs(x.real))]
        # deduplicate multiple eigenvalues; each may carry several intercepts
        slopes = []
        for u in sorted(real):
            if abs(u) > VERTICAL_SLOPE:
                continue  # the other orientation covers near-vertical lines
            if not any(abs(u - s) < 1e-7 * (1 + abs(s)) for s in slopes):
                slopes.append(u)
        for u in slopes:
            for v in _intercepts_for_slope(u, al1, al2):
                ln = _line_from_uv(u, v, swapped)
                if ln is not None:
                    lines.append(ln)

    lines = _dedupe_lines(lines)
    lines = [ln for ln in lines if _is_tangent(e1, ln) and _is_tangent(e2, ln)]
    if not lines:
        raise NoBitangents("no real common tangent line")
    return [(ln, _label(e1, e2, ln)) for ln in lines]


def _dedupe_lines(lines, tol=1e-6):
    out = []
    for ln in lines:
        if not any(np.allclose(ln, o, atol=tol) for o in out):
            out.append(ln)
    return out


def _is_tangent(conic: Conic, line, rel_tol=1e-3) -> bool:
    """Tangency check: the two line-conic intersection points (or the miss
    gap, for a line just outside) are closer than rel_tol x the major axis.

    The discriminant itself has no usable relative scale at an exact
    tangency, so the criterion is geometric: gap^2 = |disc| / qa^2 where qa
    is the (positive definite) quadratic form along the line direction.
    """
    a, b, c = line
    foot = np.array([-a * c, -b * c])
    dx, dy = -b, a
    x0, y0 = foot
    A, B, C, D, E, F = conic.vector()
    qa = A * dx * dx + B * dy * dy + C * dx * dy
    qb = (2 * A * x0 * dx + 2 * B * y0 * dy + C * (x0 * dy + y0 * dx)
          + D * dx + E * dy)
    qc = conic.evaluate(foot)
    disc = qb * qb - 4 * qa * qc
    major = conic.semi_axes[0]
    if not np.isfinite(major):
        return False
    return abs(disc) / (qa * qa) <= (rel_tol * (1.0 + major)) ** 2


def _label(e1: Conic, e2: Conic, line) -> BitangentTypeLabel:
    """L/R of each ellipse relative to the line directed from E1 to E2.

    A point w is Left of direction d when cross(d, w) = dx*wy - dy*wx > 0.
    """
    a, b, c = line
    c1, c2 = e1.center, e2.center
    t = np.array([-b, a])
    d = t if c2 @ t >= c1 @ t else -t
    foot = np.array([-a * c, -b * c])
    w1, w2 = c1 - foot, c2 - foot
    s1 = d[0] * w1[1] - d[1] * w1[0]
    s2 = d[0] * w2[1] - d[1] * w2[0]
    k1 = "L" if s1 > 0 else "R"
    k2 = "L" if s2 > 0 else "R"
    return BitangentTypeLabel(k1 + k2, external=(k1 == k2))


def select_usable(e1: Conic, e2: Conic, k1, k2, candidates):
    """Pick the pair bitangent that is also a bitangent of the level line.

    `k1`, `k2` are the mean unit curvature vectors of the two fitted
    neighbourhoods.  The fitted arc sits on the far side of its ellipse
    center from the direction the curve bends, so the usable line must
    touch each ellipse at a point t with dot(t - center, k) < 0.  This is
    the orientation-free form of the case/pattern selection: in an axis
    aligned configuration it reads the y-component signs of k for
    side-by-side pairs (reversed letters when the second ellipse sits on
    the left) and the x-component signs for stacked pairs, reproducing the
    published case table, but it stays valid for oblique configurations
    where the component signs lose their meaning.
    """
    if not candidates:
        raise SelectionFailed("empty candidate list")
    k1 = np.asarray(k1, float)
    k2 = np.asarray(k2, float)
    matches = []
    for line, _label_ in candidates:
        t1 = _tangency_point(e1, line)
        t2 = _tangency_point(e2, line)
        if (t1 - e1.center) @ k1 < 0 and (t2 - e2.center) @ k2 < 0:
            matches.append(line)
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise SelectionFailed("no candidate touches the arcs on their side")
    raise SelectionFailed("ambiguous usable-bitangent selection")


def _window_indices(line: LevelLine, annotation: CurveAnnotation,
                    center: int, half: int) -> np.ndarray:
    """Vertex indices around a contact, clipped at the nearest inflection.

    Inflection clipping never shrinks a side below 6 vertices (the minimum
    an ellipse fit needs); curve ends still truncate open curves.
    """
    n = len(line.points)
    infl = set(annotation.inflection_indices)

    def clip_side(step):
        out = []
        k = center
        for _ in range(half):
            nk = k + step
            if line.closed:
                nk %= n
            elif nk < 0 or nk >= n:
                break
            out.append(nk)
            if nk in infl and len(out) >= 6:
                break
            k = nk
        return out

    back = clip_side(-1)[::-1]
    fwd = clip_side(+1)
    return np.array(back + [center] + fwd, dtype=int)


def _line_rms(pts: np.ndarray) -> float:
    """RMS residual of the total-least-squares line through the points."""
    q = pts - pts.mean(0)
    sv = np.linalg.svd(q, compute_uv=False)
    return float(sv[-1] / np.sqrt(len(pts)))


def _mean_unit_normal(annotation: CurveAnnotation, idx: np.ndarray):
    m = annotation.normal[idx].mean(0)
    norm = np.hypot(m[0], m[1])
    if norm == 0:
        raise SelectionFailed("degenerate curvature vector")
    return m / norm


def refine_bitangent(line: LevelLine, annotation: CurveAnnotation,
                     candidate: Bitangent, window: int = FIT_WINDOW) -> Bitangent:
    """Refine a candidate by fitting an ellipse around each contact point.

    The two window ellipses have at most four common tangents; the usable
    one is selected from the configuration case and the curvature-vector
    pattern, and each refined contact snaps to the nearest curve vertex.
    Raises StraightEdge when the covered portion or either window is too
    straight to support an ellipse, and FitFailed when the refined contacts
    do not land within REFINED_CONTACT_TOL of the selected line.
    """
    if window < 6:
        raise ValueError("window must be at least 6 vertices per side")
    pts = line.points
    portion_pts = pts[candidate.portion]
    if len(portion_pts) >= 2 and _line_rms(portion_pts) < STRAIGHT_RMS:
        raise StraightEdge("covered portion is a straight edge")

    idx1 = _window_indices(line, annotation, candidate.i1, window)
    idx2 = _window_indices(line, annotation, candidate.i2, window)
    if len(idx1) < 7 or len(idx2) < 7:
        raise StraightEdge("window truncated below 6 vertices per side")
    for idx in (idx1, idx2):
        if _line_rms(pts[idx]) < STRAIGHT_RMS:
            raise StraightEdge("contact window is a straight edge")

    e1 = fit_ellipse(pts[idx1])
    e2 = fit_ellipse(pts[idx2])
    if not (e1.is_ellipse and e2.is_ellipse):
        raise FitFailed("window fit is not an ellipse")
    k1 = _mean_unit_normal(annotation, idx1)
    k2 = _mean_unit_normal(annotation, idx2)
    candidates = ellipse_pair_bitangents(e1, e2)
    chosen = select_usable(e1, e2, k1, k2, candidates)

    t1 = _tangency_point(e1, chosen)
    t2 = _tangency_point(e2, chosen)
    j1 = int(idx1[np.argmin(((pts[idx1] - t1) ** 2).sum(1))])
    j2 = int(idx2[np.argmin(((pts[idx2] - t2) ** 2).sum(1))])
    if j1 == j2:
        raise FitFailed("refined contacts collapsed to one vertex")

    a, b, c = chosen
    resid = max(abs(a * pts[j1][0] + b * pts[j1][1] + c),
                abs(a * pts[j2][0] + b * pts[j2][1] + c))
    if resid > REFINED_CONTACT_TOL:
        raise FitFailed(f"refined contact residual {resid:.3f} px")

    lo, hi = min(j1, j2), max(j1, j2)
    portion = _covered_portion(line, lo, hi, chosen)
    infl = _count_inflections(portion, annotation.inflection_indices)
    crosses = _segment_crosses_polyline(pts[portion[0]], pts[portion[-1]],
                                        pts[portion])
    estimates = (t1, t2) if portion[0] == j1 else (t2, t1)
    return Bitangent(chosen, int(portion[0]), int(portion[-1]),
                     pts[portion[0]].copy(), pts[portion[-1]].copy(),
                     portion, infl, crosses, float(resid),
                     contact_estimates=estimates)


def prune_bitangents(bitangents, merge_radius: float = MERGE_RADIUS):
    """Merge bitangents whose endpoints nearly coincide.

    Single-linkage clusters under max(d(b1, b1'), d(b2, b2')) <= radius;
    each cluster keeps its largest-inflection-length member (ties: smaller
    contact residual).  Output sorted by first endpoint index.
    """
    n = len(bitangents)
    if n == 0:
        return []
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            bi, bj = bitangents[i], bitangents[j]
            d = max(np.hypot(*(bi.p1 - bj.p1)), np.hypot(*(bi.p2 - bj.p2)))
            if d <= merge_radius:
                parent[find(i)] = find(j)

    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(bitangents[i])
    survivors = [min(g, key=lambda bt: (-bt.inflection_length,
                                        bt.contact_residual))
                 for g in groups.values()]
    return sorted(survivors, key=lambda bt: (bt.i1, bt.i2))
