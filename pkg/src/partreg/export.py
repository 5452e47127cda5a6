"""CSV / SVG / JSON export helpers for inspection and overlays."""

from __future__ import annotations

import csv
import json

import numpy as np


def level_lines_to_csv(lines, path) -> None:
    """Rows of (level, line index, point index, x, y)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["level", "line", "point", "x", "y"])
        for li, line in enumerate(lines):
            for pi, (x, y) in enumerate(line.points):
                w.writerow([line.level, li, pi, f"{x:.6f}", f"{y:.6f}"])


def _polyline(points, color, width=1.0, closed=False, opacity=1.0) -> str:
    pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in points)
    tag = "polygon" if closed else "polyline"
    return (f'<{tag} points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" opacity="{opacity}"/>')


def svg_document(elements, width, height) -> str:
    body = "\n".join(elements)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n{body}\n</svg>\n')


def level_lines_to_svg(lines, path, width, height, color="#3366cc") -> None:
    elems = [_polyline(line.points, color, closed=line.closed)
             for line in lines]
    with open(path, "w") as f:
        f.write(svg_document(elems, width, height))


def dual_curve_to_csv(dual, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["vertex", "u", "v", "valid"])
        for k, ((u, v), ok) in enumerate(zip(dual.points, dual.valid)):
            w.writerow([k, f"{u:.9g}", f"{v:.9g}", int(ok)])


def bitangents_to_csv(bitangents, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["i1", "i2", "x1", "y1", "x2", "y2",
                    "inflection_length", "crosses_curve", "residual"])
        for bt in bitangents:
            w.writerow([bt.i1, bt.i2,
                        f"{bt.p1[0]:.4f}", f"{bt.p1[1]:.4f}",
                        f"{bt.p2[0]:.4f}", f"{bt.p2[1]:.4f}",
                        bt.inflection_length, int(bt.crosses_curve),
                        f"{bt.contact_residual:.4f}"])


def bitangents_to_svg(line, bitangents, path, width, height) -> None:
    elems = [_polyline(line.points, "#999999", closed=line.closed)]
    palette = ["#cc3333", "#33aa33", "#3333cc", "#cc8800", "#aa33aa"]
    for k, bt in enumerate(bitangents):
        elems.append(_polyline([bt.p1, bt.p2], palette[k % len(palette)],
                               width=1.5))
    with open(path, "w") as f:
        f.write(svg_document(elems, width, height))


def canonical_curves_to_csv(elements, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["element", "image", "level", "line", "point", "x", "y"])
        for e in elements:
            for pi, (x, y) in enumerate(e.canonical.points):
                w.writerow([e.element_id, e.image_id, e.level, e.line_index,
                            pi, f"{x:.6f}", f"{y:.6f}"])


def matches_to_json(matches, path=None):
    """Per match: source ids, frame points, distance, orientation flag."""
    out = []
    for m in matches:
        out.append({
            "part_element": m.part.element_id,
            "part_level": m.part.level,
            "part_line": m.part.line_index,
            "whole_element": m.whole.element_id,
            "whole_level": m.whole.level,
            "whole_line": m.whole.line_index,
            "part_frame": np.round(m.part.frame_points(), 4).tolist(),
            "whole_frame": np.round(m.whole.frame_points(), 4).tolist(),
            "distance": round(m.distance, 6),
            "orientation_flipped": m.flipped,
        })
    if path is not None:
        with open(path, "w") as f:
            json.dump(out, f, indent=1)
    return out
