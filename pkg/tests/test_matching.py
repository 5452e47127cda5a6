import numpy as np
import pytest

from partreg.errors import (ConsensusFailed, DegenerateCorrespondences,
                            EmptyCurve)
from partreg.frames import CanonicalCurve, Frame
from partreg.matching import (Match, RansacParams, ShapeElement,
                              affine_from_correspondences, apply_affine,
                              discrete_frechet, free_space_reachable,
                              match_elements, ransac_affine,
                              reversed_canonical)


def coupling_oracle(p, q):
    """Exhaustive minimization over all monotone couplings (no memo)."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    d = np.sqrt(((p[:, None, :] - q[None, :, :]) ** 2).sum(-1))
    n, m = d.shape
    best = [np.inf]

    def walk(i, j, cur):
        cur = max(cur, d[i, j])
        if cur >= best[0]:
            return
        if i == n - 1 and j == m - 1:
            best[0] = cur
            return
        if i + 1 < n:
            walk(i + 1, j, cur)
        if j + 1 < m:
            walk(i, j + 1, cur)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, cur)

    walk(0, 0, 0.0)
    return best[0]


def element(points, frame_pts, infl=6, image_id="img", level=0.0,
            line_index=0, element_id=0):
    frame = Frame(*[np.asarray(p, float) for p in frame_pts], quality=1.0)
    return ShapeElement(CanonicalCurve(np.asarray(points, float)), frame,
                        infl, image_id, level, line_index, element_id)


class TestFrechet:
    def test_identical_zero(self):
        p = np.random.default_rng(0).uniform(0, 1, (10, 2))
        assert discrete_frechet(p, p) == 0.0

    def test_parallel_segments(self):
        p = [(0.0, 0.0), (1.0, 0.0)]
        q = [(0.0, 1.0), (1.0, 1.0)]
        assert discrete_frechet(p, q) == pytest.approx(1.0)

    def test_symmetry_and_endpoint_bound(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = rng.uniform(0, 1, (rng.integers(2, 9), 2))
            q = rng.uniform(0, 1, (rng.integers(2, 9), 2))
            d = discrete_frechet(p, q)
            assert d == pytest.approx(discrete_frechet(q, p))
            assert d >= np.hypot(*(p[0] - q[0])) - 1e-12
            assert d >= np.hypot(*(p[-1] - q[-1])) - 1e-12

    def test_matches_coupling_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            p = rng.uniform(0, 1, (rng.integers(1, 9), 2))
            q = rng.uniform(0, 1, (rng.integers(1, 9), 2))
            assert discrete_frechet(p, q) == pytest.approx(
                coupling_oracle(p, q), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(EmptyCurve):
            discrete_frechet(np.zeros((0, 2)), np.zeros((3, 2)))


class TestFreeSpace:
    def test_reachable_at_frechet_distance(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            p = rng.uniform(0, 1, (rng.integers(2, 8), 2))
            q = rng.uniform(0, 1, (rng.integers(2, 8), 2))
            d = discrete_frechet(p, q)
            grid, path = free_space_reachable(p, q, d + 1e-9)
            assert grid[-1, -1] and path is not None
            assert path[0] == (0, 0) and path[-1] == (len(p) - 1, len(q) - 1)
            grid2, path2 = free_space_reachable(p, q, d * (1 - 1e-9) - 1e-12)
            assert not grid2[-1, -1] and path2 is None

    def test_identical_curves_diagonal(self):
        p = np.random.default_rng(4).uniform(0, 1, (6, 2))
        grid, path = free_space_reachable(p, p, 0.0)
        assert all(i == j for i, j in path)

    def test_path_is_monotone(self):
        rng = np.random.default_rng(5)
        p = rng.uniform(0, 1, (7, 2))
        q = rng.uniform(0, 1, (5, 2))
        _, path = free_space_reachable(p, q, discrete_frechet(p, q))
        steps = np.diff(np.asarray(path), axis=0)
        assert np.all(steps >= 0) and np.all(steps <= 1)


def unit_square_curve(seed=0, n=24):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, n)
    y = 0.3 + 0.2 * np.sin(2 * np.pi * t * rng.uniform(0.8, 1.2))
    return np.column_stack([t, y])


class TestMatchElements:
    def make_element(self, eid, seed, image_id, level=10.0, line_index=0):
        pts = unit_square_curve(seed)
        frame = [(0, 0), (10, -40), (60, -45), (70, 5)]
        return element(pts, frame, infl=6, image_id=image_id, level=level,
                       line_index=line_index, element_id=eid)

    def test_self_match_zero_distance(self):
        part = [self.make_element(k, k, "part") for k in range(4)]
        whole = [self.make_element(k + 10, k, "whole", line_index=k)
                 for k in range(4)]
        matches = match_elements(part, whole, threshold=0.05)
        assert len(matches) == 4
        assert all(m.distance == 0 for m in matches)
        assert all(not m.flipped for m in matches)

    def test_zero_threshold_on_perturbed(self):
        part = [self.make_element(0, 0, "part")]
        pts = unit_square_curve(0) + 0.01
        whole = [element(pts, [(0, 0), (10, -40), (60, -45), (70, 5)],
                         image_id="whole")]
        assert match_elements(part, whole, threshold=0.0) == []

    def test_flipped_copy_matches(self):
        part = [self.make_element(0, 7, "part")]
        flipped_pts = reversed_canonical(part[0].canonical.points)
        whole = [element(flipped_pts, [(0, 0), (10, -40), (60, -45), (70, 5)],
                         image_id="whole")]
        matches = match_elements(part, whole, threshold=0.01)
        assert len(matches) == 1
        assert matches[0].flipped

    def test_band_filter(self):
        part = [self.make_element(0, 0, "part")]
        whole = [self.make_element(1, 0, "whole")]
        whole[0].inflection_length = 9  # |6 - 9| > 2
        assert match_elements(part, whole, threshold=0.5) == []

    def test_planted_among_distractors(self):
        rng = np.random.default_rng(6)
        part = [self.make_element(0, 42, "part")]
        frame = [(0, 0), (10, -40), (60, -45), (70, 5)]
        # planted: noisy copy; distractors: clearly different wave shapes
        planted_pts = unit_square_curve(42) + rng.normal(0, 0.003, (24, 2))
        whole = [element(planted_pts, frame, image_id="whole", line_index=5,
                         element_id=5)]
        t = np.linspace(0, 1, 24)
        for k in range(9):
            y = 0.5 + 0.35 * np.sin(2 * np.pi * t * (2.0 + 0.5 * k) + k)
            whole.append(element(np.column_stack([t, y]), frame,
                                 image_id="whole", line_index=10 + k,
                                 element_id=10 + k))
        dists = [discrete_frechet(part[0].canonical.points,
                                  w.canonical.points) for w in whole]
        assert min(dists[1:]) > 3 * dists[0]
        matches = match_elements(part, whole, threshold=0.05)
        assert len(matches) == 1
        assert matches[0].whole.element_id == 5

    def test_per_line_uniqueness(self):
        part = [self.make_element(0, 3, "part")]
        # two nearly identical whole elements on the same level line
        w1 = self.make_element(1, 3, "whole", line_index=0)
        w2 = self.make_element(2, 3, "whole", line_index=0)
        w2.canonical.points = w2.canonical.points + 1e-4
        matches = match_elements(part, [w1, w2], threshold=0.1)
        assert len(matches) == 1
        assert matches[0].whole.element_id == 1


class TestAffine:
    def test_identity(self):
        src = np.array([[0, 0], [1, 0], [0, 1]], float)
        t = affine_from_correspondences(src, src)
        assert np.allclose(t, [[1, 0, 0], [0, 1, 0]], atol=1e-12)

    def test_synthesize_and_recover(self):
        ang = np.deg2rad(40)
        truth = 1.3 * np.array([[np.cos(ang), -np.sin(ang)],
                                [np.sin(ang), np.cos(ang)]])
        t_full = np.hstack([truth, [[12.0], [-7.0]]])
        rng = np.random.default_rng(7)
        src = rng.uniform(-50, 50, (6, 2))
        dst = apply_affine(t_full, src)
        est = affine_from_correspondences(src, dst)
        assert np.allclose(est, t_full, atol=1e-9)

    def test_collinear_rejected(self):
        src = np.array([[0, 0], [1, 1], [2, 2]], float)
        dst = np.array([[0, 0], [1, 0], [2, 0]], float)
        with pytest.raises(DegenerateCorrespondences):
            affine_from_correspondences(src, dst)


def planted_matches(rng, truth, n_true=10, n_false=10, domain=512.0):
    """Matches whose whole frames follow `truth`, plus uniform junk."""
    matches = []
    eid = 0
    for _ in range(n_true):
        fp = rng.uniform(60, domain - 60, 2)
        quad = np.array([fp, fp + [30, 5], fp + [25, 35], fp + [-5, 30]])
        part_frame = Frame(*quad, quality=1.0)
        whole_frame = Frame(*apply_affine(truth, quad), quality=1.0)
        pe = ShapeElement(CanonicalCurve(unit_square_curve(eid)), part_frame,
                          6, "part", 10.0, eid, eid)
        we = ShapeElement(CanonicalCurve(unit_square_curve(eid)), whole_frame,
                          6, "whole", 10.0, eid, 100 + eid)
        matches.append(Match(pe, we, 0.01, False))
        eid += 1
    for _ in range(n_false):
        quad = rng.uniform(0, domain, 2) + np.array(
            [[0, 0], [30, 5], [25, 35], [-5, 30]])
        wquad = rng.uniform(0, domain, 2) + np.array(
            [[0, 0], [28, 6], [22, 38], [-6, 28]])
        pe = ShapeElement(CanonicalCurve(unit_square_curve(eid)),
                          Frame(*quad, quality=1.0), 6, "part", 10.0, eid, eid)
        we = ShapeElement(CanonicalCurve(unit_square_curve(eid)),
                          Frame(*wquad, quality=1.0), 6, "whole", 10.0, eid,
                          100 + eid)
        matches.append(Match(pe, we, 0.05, False))
        eid += 1
    return matches


class TestRansac:
    truth = np.array([[0.94, -0.34, 130.0], [0.34, 0.94, 40.0]])

    def test_planted_transform_recovered(self):
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            matches = planted_matches(rng, self.truth)
            t, inliers = ransac_affine(matches,
                                       RansacParams(seed=seed))
            corners = np.array([[0, 0], [511, 0], [0, 511], [511, 511]],
                               float)
            err = np.sqrt(((apply_affine(t, corners)
                            - apply_affine(self.truth, corners)) ** 2
                           ).sum(1)).max()
            assert err < 1.0
            assert set(range(10)) <= set(inliers)

    def test_no_outliers_equals_least_squares(self):
        rng = np.random.default_rng(8)
        matches = planted_matches(rng, self.truth, n_true=8, n_false=0)
        t, inliers = ransac_affine(matches, RansacParams(seed=3))
        src = np.vstack([m.part.frame_points() for m in matches])
        dst = np.vstack([apply_affine(self.truth, m.part.frame_points())
                         for m in matches])
        direct = affine_from_correspondences(src, dst)
        assert np.allclose(t, direct, atol=1e-9)
        assert inliers == list(range(8))

    def test_ambiguous_matches_fail(self):
        for seed in range(10):
            rng = np.random.default_rng(2000 + seed)
            matches = planted_matches(rng, self.truth, n_true=1, n_false=12)
            with pytest.raises(ConsensusFailed):
                ransac_affine(matches, RansacParams(seed=seed))

    def test_order_invariance(self):
        rng = np.random.default_rng(9)
        matches = planted_matches(rng, self.truth)
        t1, in1 = ransac_affine(matches, RansacParams(seed=5))
        shuffled = list(matches)
        np.random.default_rng(1).shuffle(shuffled)
        t2, in2 = ransac_affine(shuffled, RansacParams(seed=5))
        assert np.allclose(t1, t2)
        picked1 = {id(matches[k]) for k in in1}
        picked2 = {id(shuffled[k]) for k in in2}
        assert picked1 == picked2
