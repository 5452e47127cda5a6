"""End-to-end part-to-whole registration pipeline.

Stages: preprocessing (smoothing + bias removal), level line extraction,
bitangent detection and refinement, canonical frame construction, canonical
curve matching, and a global affine from RANSAC over the match set.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import export
from .bitangents import candidate_bitangents
from .ellipses import prune_bitangents, refine_bitangent
from .errors import ConsensusFailed, PartregError
from .frames import build_frames, canonical_curve, cast_points
from .imageio import load_gray, validate_image
from .levellines import annotate, extract_level_lines, resample_uniform
from .matching import (RansacParams, ShapeElement, apply_affine,
                       match_elements, ransac_affine)
from .preprocess import amss_smooth, correct_bias, fit_bias

VALID_STEPS = (16, 12, 8, 4, 1)


@dataclass
class PipelineConfig:
    part_path: str = ""
    whole_path: str = ""
    levels_step: int | None = 8
    levels_around: list = field(default_factory=list)
    halfwidth: int = 10
    amss_scale: float = 2.0
    bias_degree_m: int = 2
    bias_degree_n: int = 2
    resample_spacing: float = 1.5
    min_len: int = 6
    max_len: int = 10
    match_threshold: float = 0.15
    ransac_iterations: int = 2000
    ransac_inlier_tol_px: float = 5.0
    ransac_min_inliers: int = 3
    seed: int | None = None

    def validate(self) -> None:
        if self.seed is None:
            raise ValueError("seed is mandatory")
        if self.levels_around:
            if not (5 <= self.halfwidth <= 20):
                raise ValueError("halfwidth must be within 5..20")
            if any(not (0 <= l <= 255) for l in self.levels_around):
                raise ValueError("levels must be within 0..255")
        else:
            if self.levels_step not in VALID_STEPS:
                raise ValueError(f"levels_step must be one of {VALID_STEPS}")
        if self.amss_scale < 0:
            raise ValueError("amss_scale must be non-negative")
        if not (0 < self.match_threshold < 2):
            raise ValueError("match_threshold out of range")
        if self.min_len < 2 or self.max_len < self.min_len:
            raise ValueError("invalid inflection band")
        if min(self.ransac_iterations, self.ransac_min_inliers) < 1 \
                or self.ransac_inlier_tol_px <= 0:
            raise ValueError("invalid ransac settings")

    def levels(self) -> list:
        if self.levels_around:
            out = set()
            for center in self.levels_around:
                lo = max(0, int(center) - self.halfwidth)
                hi = min(255, int(center) + self.halfwidth)
                out.update(range(lo, hi + 1))
            return sorted(out)
        return list(range(self.levels_step, 256, self.levels_step))

    def ransac_params(self) -> RansacParams:
        return RansacParams(self.ransac_iterations, self.ransac_inlier_tol_px,
                            self.ransac_min_inliers, int(self.seed))

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        """Flat key = value text file; '#' starts a comment."""
        cfg = cls()
        with open(path) as f:
            for raw in f:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"bad config line: {raw.rstrip()}")
                key, value = (s.strip() for s in line.split("=", 1))
                cfg.set_option(key, value)
        return cfg

    def set_option(self, key: str, value: str) -> None:
        if not hasattr(self, key):
            raise ValueError(f"unknown config key: {key}")
        current = getattr(self, key)
        if key == "levels_around":
            parsed = [int(v) for v in value.replace(",", " ").split()]
        elif key in ("part_path", "whole_path"):
            parsed = value
        elif key in ("amss_scale", "match_threshold", "ransac_inlier_tol_px",
                     "resample_spacing"):
            parsed = float(value)
        else:
            parsed = int(value)
        setattr(self, key, parsed)


@dataclass
class RegistrationReport:
    success: bool
    failure_reason: str | None
    transform: list | None            # row-major 2x3, part px -> whole px
    matches: list
    inlier_matches: list
    counts: dict
    timings: dict
    config: dict
    overlay_data: dict | None = None  # not serialized

    def to_json(self, path=None) -> str:
        payload = {k: v for k, v in self.__dict__.items()
                   if k != "overlay_data"}
        text = json.dumps(payload, indent=1)
        if path is not None:
            with open(path, "w") as f:
                f.write(text)
        return text


def preprocess_image(img: np.ndarray, config: PipelineConfig) -> np.ndarray:
    out = amss_smooth(img, config.amss_scale)
    try:
        model = fit_bias(out, config.bias_degree_m, config.bias_degree_n)
        out = correct_bias(out, model)
    except PartregError:
        pass  # constant or degenerate images keep their intensities
    return out


def extract_shape_elements(img: np.ndarray, config: PipelineConfig,
                           image_id: str):
    """All shape elements of an image, with stage counts.

    Per-level-line failures are recorded, never raised; the returned
    elements carry every inflection length (band filtering happens later,
    after the part's fallback band is known).
    """
    counts = {"level_lines": 0, "candidates": 0, "refined": 0, "pruned": 0,
              "frames": 0, "elements": 0, "line_errors": 0}
    elements = []
    lines = extract_level_lines(img, config.levels())
    counts["level_lines"] = len(lines)
    eid = 0
    for line_index, raw_line in enumerate(lines):
        try:
            line = resample_uniform(raw_line, config.resample_spacing)
            ann = annotate(line)
            cands = candidate_bitangents(line, ann)
        except PartregError:
            counts["line_errors"] += 1
            continue
        counts["candidates"] += len(cands)
        refined = []
        for cand in cands:
            try:
                refined.append(refine_bitangent(line, ann, cand))
            except PartregError:
                continue
        counts["refined"] += len(refined)
        pruned = prune_bitangents(refined)
        counts["pruned"] += len(pruned)
        for bt in pruned:
            try:
                c1s, c2s = cast_points(line, ann, bt)
                frames = build_frames(line, bt, c1s, c2s)
            except PartregError:
                continue
            counts["frames"] += len(frames)
            for frame in frames:
                try:
                    cc = canonical_curve(
                        line.points[bt.portion], frame,
                        source=(image_id, raw_line.level, line_index, eid))
                except PartregError:
                    continue
                elements.append(ShapeElement(
                    cc, frame, bt.inflection_length, image_id,
                    raw_line.level, line_index, eid))
                eid += 1
    counts["elements"] = len(elements)
    return elements, counts, lines


def effective_band(part_elements, min_len: int, max_len: int):
    """Inflection band with the fallback for parts without long bitangents:
    when nothing reaches min_len, lower it to the longest available length
    that is at least 3."""
    lengths = [e.inflection_length for e in part_elements]
    if any(l >= min_len for l in lengths):
        return min_len, max_len
    short = [l for l in lengths if 3 <= l < min_len]
    if not short:
        return min_len, max_len
    return max(short), max_len


def _band_filter(elements, lo, hi):
    return [e for e in elements if lo <= e.inflection_length <= hi]


def run_pipeline(config: PipelineConfig) -> RegistrationReport:
    """Execute every stage; failures produce a report, not an exception."""
    config.validate()
    timings = {}
    t0 = time.perf_counter()
    part_img = load_gray(config.part_path)
    whole_img = load_gray(config.whole_path)
    timings["load"] = time.perf_counter() - t0
    return run_pipeline_on_images(part_img, whole_img, config, timings)


def run_pipeline_on_images(part_img, whole_img, config: PipelineConfig,
                           timings=None) -> RegistrationReport:
    config.validate()
    part_img = validate_image(part_img)
    whole_img = validate_image(whole_img)
    timings = {} if timings is None else timings
    counts = {}

    t0 = time.perf_counter()
    part_pre = preprocess_image(part_img, config)
    whole_pre = preprocess_image(whole_img, config)
    timings["preprocess"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    part_elements, part_counts, part_lines = extract_shape_elements(
        part_pre, config, "part")
    whole_elements, whole_counts, whole_lines = extract_shape_elements(
        whole_pre, config, "whole")
    timings["elements"] = time.perf_counter() - t0
    counts["part"] = part_counts
    counts["whole"] = whole_counts

    overlay = {"part_lines": part_lines, "whole_lines": whole_lines,
               "part_shape": part_img.shape, "whole_shape": whole_img.shape}

    lo, hi = effective_band(part_elements, config.min_len, config.max_len)
    counts["band"] = [lo, hi]
    part_band = _band_filter(part_elements, lo, hi)
    whole_band = _band_filter(whole_elements, lo, hi)
    counts["part"]["banded_elements"] = len(part_band)
    counts["whole"]["banded_elements"] = len(whole_band)

    def report(success, reason, transform, matches, inliers):
        return RegistrationReport(
            success, reason, transform,
            export.matches_to_json(matches), inliers, counts, timings,
            config.__dict__.copy(), overlay)

    if not part_band:
        return report(False, "NoShapeElements", None, [], [])

    t0 = time.perf_counter()
    matches = match_elements(part_band, whole_band, config.match_threshold)
    timings["matching"] = time.perf_counter() - t0
    counts["matches"] = len(matches)
    if not matches:
        return report(False, "NoMatches", None, [], [])

    t0 = time.perf_counter()
    try:
        transform, inliers = ransac_affine(matches, config.ransac_params())
    except ConsensusFailed:
        timings["ransac"] = time.perf_counter() - t0
        return report(False, "ConsensusFailed", None, matches, [])
    timings["ransac"] = time.perf_counter() - t0
    counts["inliers"] = len(inliers)

    rep = report(True, None, np.round(transform, 9).tolist(), matches,
                 inliers)
    rep.overlay_data["transform"] = transform
    rep.overlay_data["matches"] = matches
    rep.overlay_data["inliers"] = inliers
    return rep


def export_overlay(report: RegistrationReport, path) -> None:
    """SVG with whole level lines, (transformed) part level lines and the
    inlier match frames, in whole-image pixel coordinates."""
    data = report.overlay_data
    if data is None:
        raise ValueError("report carries no overlay data")
    h, w = data["whole_shape"]
    elems = [export._polyline(l.points, "#444444", closed=l.closed,
                              opacity=0.7) for l in data["whole_lines"]]
    transform = data.get("transform")
    for line in data["part_lines"]:
        pts = line.points if transform is None else \
            apply_affine(transform, line.points)
        elems.append(export._polyline(pts, "#ff7f0e", closed=line.closed,
                                      opacity=0.85))
    for m in data.get("matches", []):
        elems.append(export._polyline(
            np.vstack([m.whole.frame_points(), m.whole.frame_points()[:1]]),
            "#2ca02c", width=1.5))
    if not report.success:
        elems.append(f'<text x="10" y="24" fill="#cc0000" font-size="18">'
                     f'registration failed: {report.failure_reason}</text>')
    with open(path, "w") as f:
        f.write(export.svg_document(elems, w, h))
