"""Synthetic curves, images and planted transforms for testing and sweeps.

The generators produce wavy "flower" structures whose level lines carry
long bitangents, the raw material of shape elements.  Planted part/whole
image pairs come with the exact affine map from part to whole pixels, so
match truth and registration error are measurable without manual ground
truth.
"""

from __future__ import annotations

import numpy as np

from .levellines import LevelLine, resample_uniform


def flower_curve(rng=None, n_lobes=None, radius=60.0, amplitude=None,
                 center=(0.0, 0.0), spacing=1.5, phase=None,
                 second_harmonic=0.0) -> LevelLine:
    """Closed wavy curve r(t) = R (1 + a sin(k t + phase) + ...).

    With a in ~[0.1, 0.3] the curve has 2*n_lobes inflections and a rich
    set of bitangents spanning one or more valleys.
    """
    rng = np.random.default_rng() if rng is None else rng
    k = int(n_lobes if n_lobes is not None else rng.integers(4, 7))
    a = float(amplitude if amplitude is not None else rng.uniform(0.12, 0.25))
    ph = float(phase if phase is not None else rng.uniform(0, 2 * np.pi))
    t = np.linspace(0, 2 * np.pi, 1440, endpoint=False)
    r = radius * (1.0 + a * np.sin(k * t + ph)
                  + second_harmonic * np.sin(2 * k * t + 2.3 * ph))
    pts = np.column_stack([center[0] + r * np.cos(t),
                           center[1] + r * np.sin(t)])
    return resample_uniform(LevelLine(0.0, pts, True), spacing)


def bounded_projective_transform(rng, scale=1.0, max_condition=50.0,
                                 region_radius=100.0) -> np.ndarray:
    """Random 3x3 homography, orientation preserving, bounded condition.

    The perspective row is kept small enough that the vanishing line stays
    well outside `region_radius` around the origin.
    """
    for _ in range(100):
        ang = rng.uniform(0, 2 * np.pi)
        shear = rng.uniform(-0.3, 0.3)
        sx = scale * rng.uniform(0.7, 1.4)
        sy = scale * rng.uniform(0.7, 1.4)
        rot = np.array([[np.cos(ang), -np.sin(ang)],
                        [np.sin(ang), np.cos(ang)]])
        lin = rot @ np.array([[sx, sx * shear], [0, sy]])
        t = rng.uniform(-10, 10, 2)
        p = rng.uniform(-1, 1, 2) * (0.2 / region_radius)
        h = np.eye(3)
        h[:2, :2] = lin
        h[:2, 2] = t
        h[2, :2] = p
        if np.linalg.cond(h) >= max_condition:
            continue
        # vanishing line must stay clear of the working region
        wmin = 1.0 - np.hypot(*p) * region_radius
        if wmin < 0.3:
            continue
        if np.linalg.det(lin) <= 0:
            continue
        return h
    raise RuntimeError("could not draw an admissible transform")


def map_line(h: np.ndarray, line: LevelLine) -> LevelLine:
    """Map a polygonal curve through a homography, keeping vertex order."""
    pts = line.points
    w = h[2, 0] * pts[:, 0] + h[2, 1] * pts[:, 1] + h[2, 2]
    x = (h[0, 0] * pts[:, 0] + h[0, 1] * pts[:, 1] + h[0, 2]) / w
    y = (h[1, 0] * pts[:, 0] + h[1, 1] * pts[:, 1] + h[1, 2]) / w
    return LevelLine(line.level, np.column_stack([x, y]), line.closed)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def flower_field(size: int, blobs, ramp_width=3.0) -> np.ndarray:
    """Render smooth flower-shaped intensity plateaus.

    Each blob is (cx, cy, radius, n_lobes, amplitude, phase, height,
    h2_amp, h2_phase); the intensity rises from 0 to height across a ramp
    of `ramp_width` px at the wavy boundary, so every level inside the ramp
    traces the flower shape.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    for cx, cy, radius, k, amp, phase, height, h2, ph2 in blobs:
        dx, dy = xx - cx, yy - cy
        r = np.hypot(dx, dy)
        theta = np.arctan2(dy, dx)
        boundary = radius * (1.0 + amp * np.sin(k * theta + phase)
                             + h2 * np.sin((k + 3) * theta + ph2))
        img += height * _smoothstep((boundary - r) / ramp_width + 0.5)
    return np.clip(img, 0.0, 255.0)


def random_blobs(rng, size, n_blobs, radius_range=(32, 48),
                 height_range=(90, 200), margin=70):
    """Non-overlapping, mutually distinctive flower blobs.

    Lobe counts are drawn without replacement and each blob mixes in a
    different secondary harmonic, so no two blobs share a shape (shared
    shapes make the matching ambiguous by construction).  Lobes stay deep
    (amplitude >= 0.2) so long bitangents survive scale-2 smoothing.
    """
    lobe_pool = list(rng.permutation([4, 5, 6, 7, 8, 9]))
    blobs = []
    tries = 0
    while len(blobs) < n_blobs and tries < 400:
        tries += 1
        r = rng.uniform(*radius_range)
        cx = rng.uniform(margin, size - margin)
        cy = rng.uniform(margin, size - margin)
        if any(np.hypot(cx - b[0], cy - b[1]) < 1.45 * (r + b[2])
               for b in blobs):
            continue
        k = lobe_pool[len(blobs) % len(lobe_pool)]
        blobs.append((cx, cy, r, int(k),
                      rng.uniform(0.20, 0.30), rng.uniform(0, 2 * np.pi),
                      rng.uniform(*height_range),
                      rng.uniform(0.05, 0.12), rng.uniform(0, 2 * np.pi)))
    return blobs


DIHEDRAL = ("identity", "rot90", "rot180", "rot270",
            "flip_h", "flip_v", "transpose", "anti_transpose")


def dihedral_matrix(op: str, size: int) -> np.ndarray:
    """2x3 affine (pixel coords) realizing a square-dihedral operation."""
    s = size - 1.0
    mats = {
        "identity": [[1, 0, 0], [0, 1, 0]],
        "rot90": [[0, -1, s], [1, 0, 0]],        # (x,y) -> (s-y, x)
        "rot180": [[-1, 0, s], [0, -1, s]],
        "rot270": [[0, 1, 0], [-1, 0, s]],
        "flip_h": [[-1, 0, s], [0, 1, 0]],       # mirror x
        "flip_v": [[1, 0, 0], [0, -1, s]],
        "transpose": [[0, 1, 0], [1, 0, 0]],
        "anti_transpose": [[0, -1, s], [-1, 0, s]],
    }
    return np.array(mats[op], dtype=np.float64)


def apply_dihedral(img: np.ndarray, op: str) -> np.ndarray:
    if op == "identity":
        return img.copy()
    if op == "rot90":
        return np.rot90(img, k=-1).copy()
    if op == "rot180":
        return np.rot90(img, k=2).copy()
    if op == "rot270":
        return np.rot90(img, k=1).copy()
    if op == "flip_h":
        return img[:, ::-1].copy()
    if op == "flip_v":
        return img[::-1, :].copy()
    if op == "transpose":
        return img.T.copy()
    if op == "anti_transpose":
        return np.rot90(img.T, k=2).copy()
    raise ValueError(op)


def monotone_remap(img: np.ndarray, gamma: float = 0.8) -> np.ndarray:
    """Strictly increasing contrast change v -> 255 (v/255)^gamma."""
    return 255.0 * np.power(np.clip(img, 0, 255) / 255.0, gamma)


def planted_pair(seed: int, whole_size=512, part_size=160, n_blobs=6,
                 noise_sigma=1.0, gamma=0.8, op=None):
    """Synthetic whole image, transformed part crop, and the true affine.

    The part is cropped around a blob, passed through a dihedral op, a
    monotone contrast remap and additive noise.  Returns (whole, part,
    affine 2x3 mapping part pixel coords to whole pixel coords, meta).
    """
    rng = np.random.default_rng(seed)
    blobs = random_blobs(rng, whole_size, n_blobs)
    whole = flower_field(whole_size, blobs)

    # crop around a blob kept clear of the part border
    usable = [b for b in blobs
              if part_size * 0.25 < b[2] + 12 < part_size * 0.5]
    blob = usable[rng.integers(len(usable))] if usable else blobs[0]
    half = part_size // 2
    x0 = int(np.clip(blob[0] + rng.uniform(-10, 10) - half, 0,
                     whole_size - part_size))
    y0 = int(np.clip(blob[1] + rng.uniform(-10, 10) - half, 0,
                     whole_size - part_size))
    crop = whole[y0:y0 + part_size, x0:x0 + part_size]

    op = DIHEDRAL[rng.integers(len(DIHEDRAL))] if op is None else op
    part = apply_dihedral(crop, op)
    part = monotone_remap(part, gamma)
    if noise_sigma > 0:
        part = np.clip(part + rng.normal(0, noise_sigma, part.shape), 0, 255)

    # true map: part coords -> crop coords (inverse dihedral) -> whole
    fwd = dihedral_matrix(op, part_size)
    lin = fwd[:, :2]
    inv_lin = np.linalg.inv(lin)
    inv_t = -inv_lin @ fwd[:, 2]
    affine = np.zeros((2, 3))
    affine[:, :2] = inv_lin
    affine[:, 2] = inv_t + np.array([x0, y0])

    meta = {"blobs": blobs, "crop_origin": (x0, y0), "op": op,
            "gamma": gamma,
            "meaningful_levels": sorted(set(
                int(round(b[6] / 2)) for b in blobs))}
    return whole, part, affine, meta


def ambiguous_pair(seed: int, whole_size=400, part_size=140, motif_count=7):
    """Whole and part sharing one repeated motif but no common layout.

    Every element matches many places; no global affine is consistent with
    more than a couple of matches, so registration must refuse.
    """
    rng = np.random.default_rng(seed)
    motif = (0.0, 0.0, 24.0, 5, 0.2, 0.4, 160.0, 0.0, 0.0)

    def scatter(size, count, rstate):
        blobs = []
        tries = 0
        while len(blobs) < count and tries < 500:
            tries += 1
            cx = rstate.uniform(45, size - 45)
            cy = rstate.uniform(45, size - 45)
            if any(np.hypot(cx - b[0], cy - b[1]) < 2.6 * motif[2]
                   for b in blobs):
                continue
            blobs.append((cx, cy) + motif[2:])
        return blobs

    whole = flower_field(whole_size, scatter(whole_size, motif_count, rng))
    part = flower_field(part_size, scatter(part_size, 2, rng))
    return whole, part


def corner_rmse(estimate: np.ndarray, truth: np.ndarray, width: int,
                height: int) -> float:
    """RMS disagreement of two affines over the part image corners."""
    corners = np.array([[0, 0], [width - 1, 0], [0, height - 1],
                        [width - 1, height - 1]], dtype=np.float64)
    ones = np.ones((4, 1))
    hom = np.hstack([corners, ones])
    pa = hom @ np.asarray(estimate).T
    pb = hom @ np.asarray(truth).T
    return float(np.sqrt(np.mean(((pa - pb) ** 2).sum(1))))
