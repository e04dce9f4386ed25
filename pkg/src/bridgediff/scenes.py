"""Synthetic captioned scenes: symbolic specs, deterministic rasterization,
and the fixed caption grammar.

A scene holds one or two colored shapes on a 4x4 cell grid over a neutral
gray background. Captions follow "a {color} {shape}" or
"a {color} {shape} {relation} a {color} {shape}", where the relation is
geometrically true of the rendered centers (dominant axis, strict).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

GRID = 4
SHAPES = ("circle", "square", "triangle")
COLORS = {
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
}
RELATIONS = ("left of", "right of", "above", "below")
FLIP = {"left of": "right of", "right of": "left of", "above": "below", "below": "above"}
SIZES = {"small": 0.30, "large": 0.42}
BACKGROUND = (128, 128, 128)


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    cell: tuple  # (row, col) in 0..GRID-1
    size: str    # "small" | "large"


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple
    relation: str | None = None

    def canonical(self):
        """Order-independent key: objects sorted by cell, relation reoriented.

        Two specs describing the same picture compare equal even if their
        subject/object order differs.
        """
        if len(self.objects) < 2:
            return (tuple(self.objects), self.relation)
        a, b = self.objects
        if (a.cell, a.shape, a.color, a.size) <= (b.cell, b.shape, b.color, b.size):
            return ((a, b), self.relation)
        return ((b, a), FLIP[self.relation] if self.relation else None)

    def __eq__(self, other):
        return isinstance(other, SceneSpec) and self.canonical() == other.canonical()

    def __hash__(self):
        return hash(self.canonical())

    def to_dict(self):
        return {
            "objects": [
                {"shape": o.shape, "color": o.color, "cell": list(o.cell), "size": o.size}
                for o in self.objects
            ],
            "relation": self.relation,
        }

    @classmethod
    def from_dict(cls, d):
        objs = tuple(
            ObjectSpec(o["shape"], o["color"], tuple(o["cell"]), o["size"])
            for o in d["objects"]
        )
        return cls(objs, d.get("relation"))


def caption_for(spec: SceneSpec) -> str:
    parts = [f"a {o.color} {o.shape}" for o in spec.objects]
    if len(parts) == 1:
        return parts[0]
    return f"{parts[0]} {spec.relation} {parts[1]}"


def parse_caption(text: str):
    """Inverse of the caption grammar: (list of (color, shape), relation) or None."""
    toks = text.lower().split()

    def obj_at(i):
        if i + 2 < len(toks) + 1 and toks[i] == "a" and toks[i + 1] in COLORS \
                and toks[i + 2] in SHAPES:
            return (toks[i + 1], toks[i + 2])
        return None

    first = obj_at(0)
    if first is None:
        return None
    if len(toks) == 3:
        return ([first], None)
    rest = toks[3:]
    for rel in RELATIONS:
        rel_toks = rel.split()
        if rest[: len(rel_toks)] == rel_toks:
            second = obj_at(3 + len(rel_toks))
            if second is not None and len(toks) == 6 + len(rel_toks):
                return ([first, second], rel)
    return None


def relation_of(cell_a: tuple, cell_b: tuple) -> str | None:
    """Dominant-axis relation of a w.r.t. b; None when ambiguous."""
    dr = cell_a[0] - cell_b[0]
    dc = cell_a[1] - cell_b[1]
    if abs(dc) > abs(dr):
        return "left of" if dc < 0 else "right of"
    if abs(dr) > abs(dc):
        return "above" if dr < 0 else "below"
    return None


def generate_scene(rng: np.random.Generator):
    """Uniformly sample a valid scene; returns (SceneSpec, caption)."""
    def sample_obj(cell):
        return ObjectSpec(
            shape=SHAPES[rng.integers(len(SHAPES))],
            color=list(COLORS)[rng.integers(len(COLORS))],
            cell=cell,
            size=list(SIZES)[rng.integers(len(SIZES))],
        )

    if rng.random() < 0.5:
        cell = (int(rng.integers(GRID)), int(rng.integers(GRID)))
        spec = SceneSpec((sample_obj(cell),))
    else:
        relation = RELATIONS[rng.integers(len(RELATIONS))]
        while True:
            c1 = (int(rng.integers(GRID)), int(rng.integers(GRID)))
            c2 = (int(rng.integers(GRID)), int(rng.integers(GRID)))
            if c1 != c2 and relation_of(c1, c2) == relation:
                break
        spec = SceneSpec((sample_obj(c1), sample_obj(c2)), relation)
    return spec, caption_for(spec)


def shape_mask(shape: str, cy: int, cx: int, half: int, res: int) -> np.ndarray:
    yy, xx = np.mgrid[0:res, 0:res]
    if shape == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= half**2
    if shape == "square":
        return np.maximum(np.abs(yy - cy), np.abs(xx - cx)) <= half
    if shape == "triangle":
        rows = (yy >= cy - half) & (yy <= cy + half)
        halfwidth = (yy - (cy - half)) / 2.0
        return rows & (np.abs(xx - cx) <= halfwidth)
    raise ContractViolation(f"unknown shape {shape!r}")


def render(spec: SceneSpec, resolution: int = 32) -> np.ndarray:
    """Rasterize to a [3, R, R] float32 array in [-1, 1]. No anti-aliasing."""
    if resolution < 16 or resolution % GRID != 0:
        raise ContractViolation(f"resolution must be >= 16 and divisible by {GRID}")
    if len(spec.objects) > 2:
        raise ContractViolation("scenes hold at most two objects")
    img = np.empty((3, resolution, resolution), dtype=np.float32)
    for ch, v in enumerate(BACKGROUND):
        img[ch] = v / 127.5 - 1.0
    cell = resolution // GRID
    for obj in spec.objects:
        cy = obj.cell[0] * cell + cell // 2
        cx = obj.cell[1] * cell + cell // 2
        # clamp so shapes stay inside their cell (no overlap by construction)
        half = max(1, min(round(SIZES[obj.size] * cell), cell // 2 - 1))
        mask = shape_mask(obj.shape, cy, cx, half, resolution)
        for ch, v in enumerate(COLORS[obj.color]):
            img[ch][mask] = v / 127.5 - 1.0
    return img
