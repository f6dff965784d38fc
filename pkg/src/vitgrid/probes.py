"""Deterministic synthetic probe datasets for spatial perception.

Two generators share a template pool of parameterized geometric shapes
(9 shape categories, 7 colors, jittered scale and position, one shape per
336 x 336 cell):

  * shapegrid: images assembled from 5 predefined cell layouts, paired with
    four question types (relative distance, relative position, relative
    area, counting);
  * sudoku: 3 x 3 grids whose center cell is always a red pentagram anchor,
    paired with relative-direction questions about one of the surrounding
    cells, which are sampled from the shape pool plus a set of stylized
    real-world glyphs (car, plane, bear, ...).

Every answer is derivable from the stored layout metadata alone, and every
byte of output is a pure function of (seed, item index): item i draws its
randomness from ``default_rng([seed, i])``, so generation can shard by index.
Rasterization is a deterministic scanline fill (even-odd rule for polygons,
exact disc test for circles) at pixel centers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

CELL = 336
BACKGROUND = (255, 255, 255)
BORDER = (208, 208, 208)

PALETTE = {
    "red": (220, 40, 40),
    "yellow": (240, 200, 30),
    "blue": (40, 90, 220),
    "green": (40, 170, 80),
    "orange": (240, 140, 30),
    "purple": (150, 60, 190),
    "cyan": (40, 190, 210),
}

SHAPES = (
    "triangle", "square", "pentagram", "circle", "pentagon",
    "hexagon", "star4", "diamond", "cross",
)

GLYPHS = ("bear", "car", "plane", "house", "tree", "boat")

LAYOUTS = ((1, 2), (2, 3), (2, 2), (2, 1), (3, 2))

TASKS = ("relative_distance", "relative_position", "relative_area", "counting")

DIRECTIONS = {
    (-1, -1): "upper-left", (-1, 0): "above", (-1, 1): "upper-right",
    (0, -1): "left", (0, 1): "right",
    (1, -1): "lower-left", (1, 0): "below", (1, 1): "lower-right",
}

_SCALE_RANGE = (0.3, 0.9)
_DIST_MARGIN_PX = 8.0
_AREA_MARGIN = 1.15


def _regular_points(n, start_deg=-90.0):
    ang = np.deg2rad(start_deg) + 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _star_points(n, inner, start_deg=-90.0):
    ang = np.deg2rad(start_deg) + np.pi * np.arange(2 * n) / n
    rad = np.where(np.arange(2 * n) % 2 == 0, 1.0, inner)
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def _cross_points(arm=0.35):
    a = arm
    return np.array([
        (-a, -1), (a, -1), (a, -a), (1, -a), (1, a), (a, a),
        (a, 1), (-a, 1), (-a, a), (-1, a), (-1, -a), (-a, -a),
    ], dtype=np.float64)


def _unit_extent(verts: np.ndarray) -> np.ndarray:
    """Normalize an outline so its bounding half-extent is exactly 1.

    A template at scale s then spans s * CELL pixels, e.g. a scale-0.5 square
    covers the central 168 x 168 region of its cell.
    """
    return verts / np.max(np.abs(verts))


_SHAPE_VERTICES = {
    name: _unit_extent(v)
    for name, v in {
        "triangle": _regular_points(3),
        "square": _regular_points(4, start_deg=-45.0),
        "pentagram": _star_points(5, inner=float(np.cos(2 * np.pi / 5) / np.cos(np.pi / 5))),
        "pentagon": _regular_points(5),
        "hexagon": _regular_points(6),
        "star4": _star_points(4, inner=0.4),
        "diamond": _regular_points(4),
        "cross": _cross_points(),
    }.items()
}


def _shoelace(verts) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def shape_area_coeff(shape: str) -> float:
    """Analytic area of the unit-radius outline; pixel area is coeff * r_px^2."""
    if shape == "circle":
        return float(np.pi)
    return _shoelace(_SHAPE_VERTICES[shape])


@dataclass(frozen=True)
class ShapeTemplate:
    shape: str
    color: str
    scale: float
    offset: tuple  # (dx, dy) pixels from the cell center

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown shape {self.shape!r}")
        if self.color not in PALETTE:
            raise ValidationError(f"unknown color {self.color!r}")
        if not _SCALE_RANGE[0] <= self.scale <= _SCALE_RANGE[1]:
            raise ValidationError(f"scale {self.scale} outside {_SCALE_RANGE}")


@dataclass(frozen=True)
class GlyphTemplate:
    category: str
    scale: float
    offset: tuple

    def __post_init__(self):
        if self.category not in GLYPHS:
            raise ValidationError(f"unknown glyph category {self.category!r}")


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    cells: tuple

    def __post_init__(self):
        if len(self.cells) != self.rows * self.cols:
            raise ValidationError(
                f"layout {self.rows}x{self.cols} needs {self.rows * self.cols} cells, "
                f"got {len(self.cells)}"
            )


@dataclass(frozen=True)
class ProbeItem:
    image_id: str
    task: str
    question: str
    answer: str
    meta: dict


def template_name(t) -> str:
    if isinstance(t, GlyphTemplate):
        return t.category
    return f"{t.color} {t.shape}"


def _polygon_mask(h: int, w: int, verts: np.ndarray) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centers."""
    x1, y1 = verts[:, 0], verts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    yc = (np.arange(h) + 0.5)[:, None]
    ylo, yhi = np.minimum(y1, y2), np.maximum(y1, y2)
    valid = (yc >= ylo) & (yc < yhi)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (yc - y1) / (y2 - y1)
    xc = np.where(valid, x1 + t * (x2 - x1), np.inf)
    xc.sort(axis=1)
    xs = np.arange(w) + 0.5
    mask = np.zeros((h, w), dtype=bool)
    for j in range(0, xc.shape[1] - 1, 2):
        a, b = xc[:, j : j + 1], xc[:, j + 1 : j + 2]
        pair_ok = np.isfinite(xc[:, j + 1])[:, None]
        mask |= pair_ok & (xs >= a) & (xs < b)
    return mask


def _disc_mask(h: int, w: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy = (np.arange(h) + 0.5)[:, None] - cy
    xx = (np.arange(w) + 0.5)[None, :] - cx
    return yy * yy + xx * xx <= r * r


def _paint_shape(canvas, cx, cy, shape, r_px, color):
    h, w = canvas.shape[:2]
    rgb = np.array(color, dtype=np.uint8)
    if shape == "circle":
        mask = _disc_mask(h, w, cx, cy, r_px)
    else:
        verts = _SHAPE_VERTICES[shape] * r_px + np.array([cx, cy])
        mask = _polygon_mask(h, w, verts)
    canvas[mask] = rgb


# Glyphs are small scenes of primitives in [-1, 1]^2 cell-local coordinates
# (y down): ("poly", verts, color) or ("disc", (cx, cy, r), color).
_GLYPH_SCENES = {
    "car": (
        ("poly", [(-0.9, 0.1), (0.9, 0.1), (0.9, 0.5), (-0.9, 0.5)], (200, 30, 30)),
        ("poly", [(-0.5, -0.35), (0.45, -0.35), (0.6, 0.1), (-0.65, 0.1)], (230, 90, 80)),
        ("disc", (-0.5, 0.55, 0.2), (40, 40, 40)),
        ("disc", (0.5, 0.55, 0.2), (40, 40, 40)),
    ),
    "plane": (
        ("poly", [(-0.9, -0.08), (0.9, -0.08), (0.9, 0.12), (-0.9, 0.12)], (120, 130, 150)),
        ("poly", [(-0.1, 0.0), (0.25, 0.0), (-0.15, 0.75)], (90, 100, 120)),
        ("poly", [(-0.1, 0.0), (0.25, 0.0), (-0.15, -0.75)], (90, 100, 120)),
        ("poly", [(0.9, -0.08), (0.65, -0.45), (0.55, -0.08)], (90, 100, 120)),
    ),
    "bear": (
        ("disc", (-0.45, -0.5, 0.26), (140, 90, 50)),
        ("disc", (0.45, -0.5, 0.26), (140, 90, 50)),
        ("disc", (0.0, 0.1, 0.72), (160, 105, 60)),
        ("disc", (0.0, 0.32, 0.3), (210, 170, 130)),
        ("disc", (0.0, 0.2, 0.1), (40, 30, 25)),
    ),
    "house": (
        ("poly", [(-0.7, -0.1), (0.7, -0.1), (0.7, 0.85), (-0.7, 0.85)], (200, 160, 110)),
        ("poly", [(-0.85, -0.1), (0.85, -0.1), (0.0, -0.85)], (170, 60, 50)),
        ("poly", [(-0.15, 0.25), (0.15, 0.25), (0.15, 0.85), (-0.15, 0.85)], (110, 70, 40)),
    ),
    "tree": (
        ("poly", [(-0.12, 0.35), (0.12, 0.35), (0.12, 0.9), (-0.12, 0.9)], (120, 80, 40)),
        ("poly", [(-0.7, 0.45), (0.7, 0.45), (0.0, -0.9)], (40, 140, 60)),
    ),
    "boat": (
        ("poly", [(-0.85, 0.3), (0.85, 0.3), (0.5, 0.75), (-0.5, 0.75)], (120, 80, 45)),
        ("poly", [(0.05, 0.2), (0.05, -0.85), (-0.7, 0.2)], (235, 235, 225)),
        ("poly", [(0.15, 0.2), (0.15, -0.7), (0.65, 0.2)], (215, 215, 200)),
    ),
}


def _paint_glyph(canvas, cx, cy, category, r_px):
    for kind, geom, color in _GLYPH_SCENES[category]:
        rgb = tuple(color)
        if kind == "disc":
            gx, gy, gr = geom
            mask = _disc_mask(canvas.shape[0], canvas.shape[1],
                              cx + gx * r_px, cy + gy * r_px, gr * r_px)
            canvas[mask] = np.array(rgb, dtype=np.uint8)
        else:
            verts = np.asarray(geom, dtype=np.float64) * r_px + np.array([cx, cy])
            mask = _polygon_mask(canvas.shape[0], canvas.shape[1], verts)
            canvas[mask] = np.array(rgb, dtype=np.uint8)


def cell_center(rows: int, cols: int, index: int, cell) -> tuple:
    """Pixel-space center of a template, including its offset."""
    r, c = divmod(index, cols)
    return (
        c * CELL + CELL / 2 + cell.offset[0],
        r * CELL + CELL / 2 + cell.offset[1],
    )


def rasterize(spec: GridSpec) -> np.ndarray:
    """Render a grid spec to an (rows*336, cols*336, 3) uint8 image."""
    h, w = spec.rows * CELL, spec.cols * CELL
    canvas = np.empty((h, w, 3), dtype=np.uint8)
    canvas[:] = BACKGROUND
    border = np.array(BORDER, dtype=np.uint8)
    for r in range(1, spec.rows):
        canvas[r * CELL - 1 : r * CELL + 1, :] = border
    for c in range(1, spec.cols):
        canvas[:, c * CELL - 1 : c * CELL + 1] = border
    for i, cell in enumerate(spec.cells):
        cx, cy = cell_center(spec.rows, spec.cols, i, cell)
        r_px = cell.scale * CELL / 2.0
        if isinstance(cell, GlyphTemplate):
            _paint_glyph(canvas, cx, cy, cell.category, r_px)
        else:
            _paint_shape(canvas, cx, cy, cell.shape, r_px, PALETTE[cell.color])
    return canvas


def _item_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def _draw_scale(rng) -> float:
    return float(rng.uniform(*_SCALE_RANGE))


def _draw_offset(rng, scale: float) -> tuple:
    bound = CELL / 2.0 - scale * CELL / 2.0 - 2.0
    return (float(rng.uniform(-bound, bound)), float(rng.uniform(-bound, bound)))


def _shape_identities():
    return [(s, c) for s in SHAPES for c in PALETTE]


def _sample_shape_cells(rng, n: int, exclude=()):
    pool = [ident for ident in _shape_identities() if ident not in exclude]
    order = rng.permutation(len(pool))[:n]
    cells = []
    for k in order:
        shape, color = pool[int(k)]
        scale = _draw_scale(rng)
        cells.append(ShapeTemplate(shape=shape, color=color, scale=scale,
                                   offset=_draw_offset(rng, scale)))
    return cells


def _analytic_area(cell: ShapeTemplate) -> float:
    return shape_area_coeff(cell.shape) * (cell.scale * CELL / 2.0) ** 2


def _direction_name(r_from, c_from, r_to, c_to) -> str:
    dr = int(np.sign(r_to - r_from))
    dc = int(np.sign(c_to - c_from))
    return DIRECTIONS[(dr, dc)]


def _cells_to_meta(cells) -> list:
    out = []
    for cell in cells:
        if isinstance(cell, GlyphTemplate):
            out.append({"kind": "glyph", "category": cell.category,
                        "scale": cell.scale, "offset": list(cell.offset)})
        else:
            out.append({"kind": "shape", "shape": cell.shape, "color": cell.color,
                        "scale": cell.scale, "offset": list(cell.offset)})
    return out


def _cells_from_meta(meta_cells) -> tuple:
    cells = []
    for m in meta_cells:
        if m["kind"] == "glyph":
            cells.append(GlyphTemplate(category=m["category"], scale=m["scale"],
                                       offset=tuple(m["offset"])))
        else:
            cells.append(ShapeTemplate(shape=m["shape"], color=m["color"],
                                       scale=m["scale"], offset=tuple(m["offset"])))
    return tuple(cells)


def spec_from_item(item: ProbeItem) -> GridSpec:
    rows, cols = item.meta["layout"]
    return GridSpec(rows=rows, cols=cols, cells=_cells_from_meta(item.meta["cells"]))


def render_item(item: ProbeItem) -> np.ndarray:
    return rasterize(spec_from_item(item))


def _shapegrid_item(seed: int, index: int) -> ProbeItem:
    rng = _item_rng(seed, index)
    task = TASKS[index % len(TASKS)]
    if task == "relative_distance":
        layouts = [(r, c) for r, c in LAYOUTS if r * c >= 3]
    else:
        layouts = list(LAYOUTS)
    rows, cols = layouts[(index // len(TASKS)) % len(layouts)]
    n = rows * cols
    cells = _sample_shape_cells(rng, n)

    meta = {"layout": [rows, cols], "cells": _cells_to_meta(cells), "task": task}
    if task == "counting":
        pick = int(rng.integers(n))
        color = cells[pick].color
        count = sum(1 for cell in cells if cell.color == color)
        question = f"How many {color} shapes are in the image?"
        answer = str(count)
        meta["query"] = {"attr": "color", "value": color}
    elif task == "relative_position":
        a, b = (int(k) for k in rng.permutation(n)[:2])
        question = (
            f"Where is the {template_name(cells[a])} located relative to the "
            f"{template_name(cells[b])}?"
        )
        answer = _direction_name(b // cols, b % cols, a // cols, a % cols)
        meta["query"] = {"a": a, "b": b}
    elif task == "relative_distance":
        ref, a, b = (int(k) for k in rng.permutation(n)[:3])
        for _ in range(64):
            centers = [cell_center(rows, cols, i, cell) for i, cell in enumerate(cells)]
            da = float(np.hypot(centers[a][0] - centers[ref][0],
                                centers[a][1] - centers[ref][1]))
            db = float(np.hypot(centers[b][0] - centers[ref][0],
                                centers[b][1] - centers[ref][1]))
            if abs(da - db) > _DIST_MARGIN_PX:
                break
            # tie: re-jitter one contestant and try again
            cells[a] = ShapeTemplate(shape=cells[a].shape, color=cells[a].color,
                                     scale=cells[a].scale,
                                     offset=_draw_offset(rng, cells[a].scale))
        meta["cells"] = _cells_to_meta(cells)
        question = (
            f"Which shape is closer to the {template_name(cells[ref])}: the "
            f"{template_name(cells[a])} or the {template_name(cells[b])}?"
        )
        answer = template_name(cells[a]) if da < db else template_name(cells[b])
        meta["query"] = {"ref": ref, "a": a, "b": b}
    else:  # relative_area
        a, b = (int(k) for k in rng.permutation(n)[:2])
        for _ in range(64):
            areas = (_analytic_area(cells[a]), _analytic_area(cells[b]))
            ratio = max(areas) / min(areas)
            if ratio >= _AREA_MARGIN:
                break
            scale = _draw_scale(rng)
            cells[b] = ShapeTemplate(shape=cells[b].shape, color=cells[b].color,
                                     scale=scale, offset=_draw_offset(rng, scale))
        meta["cells"] = _cells_to_meta(cells)
        question = (
            f"Which shape covers a larger area: the {template_name(cells[a])} or "
            f"the {template_name(cells[b])}?"
        )
        answer = template_name(cells[a]) if areas[0] > areas[1] else template_name(cells[b])
        meta["query"] = {"a": a, "b": b}
    return ProbeItem(
        image_id=f"shapegrid_{index:06d}", task=task, question=question,
        answer=answer, meta=meta,
    )


_SUDOKU_ANCHOR = ShapeTemplate(shape="pentagram", color="red", scale=0.62, offset=(0.0, 0.0))
_PERIPHERY = [0, 1, 2, 3, 5, 6, 7, 8]


def _sudoku_item(seed: int, index: int) -> ProbeItem:
    rng = _item_rng(seed, index)
    shape_pool = [ident for ident in _shape_identities() if ident != ("pentagram", "red")]
    pool = [("shape",) + ident for ident in shape_pool] + [("glyph", g) for g in GLYPHS]
    picks = rng.permutation(len(pool))[:8]
    ring = []
    for k in picks:
        entry = pool[int(k)]
        scale = _draw_scale(rng)
        offset = _draw_offset(rng, scale)
        if entry[0] == "glyph":
            ring.append(GlyphTemplate(category=entry[1], scale=scale, offset=offset))
        else:
            ring.append(ShapeTemplate(shape=entry[1], color=entry[2],
                                      scale=scale, offset=offset))
    cells = ring[:4] + [_SUDOKU_ANCHOR] + ring[4:]
    target_slot = int(rng.integers(8))
    target = _PERIPHERY[target_slot]
    if template_name(cells[target]) == template_name(_SUDOKU_ANCHOR):
        raise AssertionError("periphery duplicated the anchor identity")
    answer = _direction_name(1, 1, target // 3, target % 3)
    question = (
        f"In which direction is the {template_name(cells[target])} located "
        f"relative to the red pentagram at the center?"
    )
    meta = {
        "layout": [3, 3],
        "cells": _cells_to_meta(cells),
        "task": "sudoku-direction",
        "query": {"target": target},
    }
    return ProbeItem(
        image_id=f"sudoku_{index:06d}", task="sudoku-direction",
        question=question, answer=answer, meta=meta,
    )


def gen_shapegrid(count: int = 4000, seed: int = 0) -> list:
    """Generate shapegrid probe items (metadata; render via render_item)."""
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    return [_shapegrid_item(seed, i) for i in range(count)]


def gen_sudoku(count: int = 8000, seed: int = 0) -> list:
    """Generate sudoku-direction probe items with the fixed red-pentagram anchor."""
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    return [_sudoku_item(seed, i) for i in range(count)]


def derive_answer(item: ProbeItem) -> str:
    """Recompute the answer from layout metadata alone (ground-truth oracle)."""
    meta = item.meta
    rows, cols = meta["layout"]
    cells = _cells_from_meta(meta["cells"])
    task = meta["task"]
    q = meta["query"]
    if task == "counting":
        return str(sum(1 for cell in cells
                       if isinstance(cell, ShapeTemplate) and cell.color == q["value"]))
    if task == "relative_position":
        a, b = q["a"], q["b"]
        return _direction_name(b // cols, b % cols, a // cols, a % cols)
    if task == "relative_distance":
        centers = [cell_center(rows, cols, i, cell) for i, cell in enumerate(cells)]
        ref, a, b = q["ref"], q["a"], q["b"]
        da = np.hypot(centers[a][0] - centers[ref][0], centers[a][1] - centers[ref][1])
        db = np.hypot(centers[b][0] - centers[ref][0], centers[b][1] - centers[ref][1])
        return template_name(cells[a]) if da < db else template_name(cells[b])
    if task == "relative_area":
        a, b = q["a"], q["b"]
        return (template_name(cells[a])
                if _analytic_area(cells[a]) > _analytic_area(cells[b])
                else template_name(cells[b]))
    if task == "sudoku-direction":
        t = q["target"]
        return _direction_name(1, 1, t // 3, t % 3)
    raise ValidationError(f"unknown task {task!r}")


def write_image(path, array: np.ndarray, fmt: str = "png") -> None:
    path = Path(path)
    if fmt == "png":
        from PIL import Image

        Image.fromarray(array, mode="RGB").save(path, format="PNG")
    elif fmt == "ppm":
        with open(path, "wb") as fh:
            fh.write(f"P6\n{array.shape[1]} {array.shape[0]}\n255\n".encode("ascii"))
            fh.write(array.tobytes())
    else:
        raise ValidationError(f"unknown image format {fmt!r}")


def item_record(item: ProbeItem, ext: str) -> dict:
    return {
        "image": f"images/{item.image_id}.{ext}",
        "task": item.task,
        "question": item.question,
        "answer": item.answer,
        "meta": item.meta,
    }


def write_dataset(items, out_dir, kind: str, seed: int, fmt: str = "png") -> dict:
    """Write images, items.jsonl, and (last) manifest.json to out_dir.

    The manifest is written only after every image and item landed, so a
    directory with a manifest is complete.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    ext = "png" if fmt == "png" else "ppm"
    with open(out / "items.jsonl", "w", encoding="utf-8") as fh:
        for item in items:
            write_image(out / "images" / f"{item.image_id}.{ext}", render_item(item), fmt)
            fh.write(json.dumps(item_record(item, ext), sort_keys=True) + "\n")
    manifest = {
        "kind": kind,
        "count": len(items),
        "seed": seed,
        "image_format": ext,
        "cell_size": CELL,
        "layouts": [list(l) for l in LAYOUTS],
        "tasks": list(TASKS) if kind == "shapegrid" else ["sudoku-direction"],
        "directions": sorted(DIRECTIONS.values()),
        "palette": {k: list(v) for k, v in PALETTE.items()},
        "shapes": list(SHAPES),
        "glyphs": list(GLYPHS),
        "balance": "tasks and layouts cycle deterministically by item index",
        "items_file": "items.jsonl",
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
