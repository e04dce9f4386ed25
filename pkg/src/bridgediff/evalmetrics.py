"""Exact alignment scoring against prompt semantics and a Frechet feature
distance between sample sets.

classify_image inverts the renderer symbolically: connected components over
the gray background, nearest canonical color, a row-profile shape signature,
and centroid cells. REJECT is returned as a value, never raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ContractViolation, NumericalError
from .scenes import (
    BACKGROUND, COLORS, GRID, SIZES, ObjectSpec, SceneSpec, parse_caption, relation_of,
)


class _Reject:
    def __repr__(self):
        return "REJECT"

    def __bool__(self):
        return False


REJECT = _Reject()

_MIN_COMPONENT_AREA = 5
_BACKGROUND_DIST = 110.0   # object pixel: farther than this from gray
_COLOR_CONFIDENCE = 100.0  # mean color must be this close to a canonical color


def _shape_from_profile(mask: np.ndarray) -> str:
    """Row-width signature: square is full-width at top and bottom, triangle
    only at the bottom, circle at neither."""
    rows = np.where(mask.any(axis=1))[0]
    sub = mask[rows[0]: rows[-1] + 1]
    widths = sub.sum(axis=1)
    max_w = widths.max()
    r_top = widths[0] / max_w
    r_bot = widths[-1] / max_w
    if r_top >= 0.7 and r_bot >= 0.7:
        return "square"
    if r_bot >= 0.7:
        return "triangle"
    return "circle"


def classify_image(image: np.ndarray):
    """Recover a SceneSpec from a [-1,1] CHW image, or REJECT."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ContractViolation("classify_image expects a [3, R, R] array")
    res = image.shape[1]
    if res < 16:
        raise ContractViolation("classify_image needs resolution >= 16")
    rgb = (np.asarray(image, dtype=np.float64) + 1.0) * 127.5
    bg = np.asarray(BACKGROUND, dtype=np.float64)
    dist_bg = np.sqrt(((rgb - bg[:, None, None]) ** 2).sum(axis=0))
    labels, n = ndimage.label(dist_bg > _BACKGROUND_DIST)
    comps = [labels == i for i in range(1, n + 1)]
    comps = [m for m in comps if m.sum() >= _MIN_COMPONENT_AREA]
    if not 1 <= len(comps) <= 2:
        return REJECT

    cell = res // GRID
    halves = {s: max(1, min(round(f * cell), cell // 2 - 1)) for s, f in SIZES.items()}
    objects = []
    for mask in comps:
        mean_rgb = rgb[:, mask].mean(axis=1)
        dists = {c: float(np.linalg.norm(mean_rgb - np.asarray(v, float)))
                 for c, v in COLORS.items()}
        color = min(dists, key=dists.get)
        if dists[color] > _COLOR_CONFIDENCE:
            return REJECT
        ys, xs = np.nonzero(mask)
        cy, cx = ys.mean(), xs.mean()
        row = min(int(cy // cell), GRID - 1)
        col = min(int(cx // cell), GRID - 1)
        half_est = (ys.max() - ys.min()) / 2.0
        size = min(halves, key=lambda s: abs(halves[s] - half_est))
        objects.append(ObjectSpec(_shape_from_profile(mask), color, (row, col), size))

    objects.sort(key=lambda o: o.cell)
    relation = None
    if len(objects) == 2:
        relation = relation_of(objects[0].cell, objects[1].cell)
    return SceneSpec(tuple(objects), relation)


# -- alignment scoring ------------------------------------------------------

@dataclass
class AlignmentReport:
    n_samples: int = 0
    n_rejected: int = 0
    n_unparseable: int = 0
    color_accuracy: float | None = None
    shape_accuracy: float | None = None
    spatial_accuracy: float | None = None
    per_prompt: list = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float | None:
        present = [a for a in (self.color_accuracy, self.shape_accuracy,
                               self.spatial_accuracy) if a is not None]
        return sum(present) / len(present) if present else None

    def to_text(self) -> str:
        lines = [
            f"n_samples={self.n_samples}",
            f"n_rejected={self.n_rejected}",
            f"n_unparseable={self.n_unparseable}",
        ]
        for key in ("color_accuracy", "shape_accuracy", "spatial_accuracy"):
            val = getattr(self, key)
            lines.append(f"{key}={'absent' if val is None else f'{val:.6f}'}")
        mean = self.mean_accuracy
        lines.append(f"mean_accuracy={'absent' if mean is None else f'{mean:.6f}'}")
        return "\n".join(lines)


def _score_sample(target_objs, relation, pred):
    """Per-category booleans for one sample; None = category not applicable."""
    spatial_applicable = len(target_objs) == 2
    fail = {"color": False, "shape": False,
            "spatial": False if spatial_applicable else None}
    if pred is REJECT or len(pred.objects) != len(target_objs):
        return fail
    if len(target_objs) == 1:
        po = pred.objects[0]
        return {"color": po.color == target_objs[0][0],
                "shape": po.shape == target_objs[0][1],
                "spatial": None}
    best = None
    for order in ((0, 1), (1, 0)):
        pa, pb = pred.objects[order[0]], pred.objects[order[1]]
        colors = (pa.color == target_objs[0][0]) + (pb.color == target_objs[1][0])
        shapes = (pa.shape == target_objs[0][1]) + (pb.shape == target_objs[1][1])
        spatial = relation_of(pa.cell, pb.cell) == relation
        cand = {"color": colors == 2, "shape": shapes == 2, "spatial": spatial,
                "_rank": colors + shapes + spatial}
        if best is None or cand["_rank"] > best["_rank"]:
            best = cand
    best.pop("_rank")
    return best


def alignment_score(samples) -> AlignmentReport:
    """Score (prompt, image) pairs; REJECT counts as failure in all applicable
    categories, unparseable prompts are excluded and reported."""
    report = AlignmentReport()
    tallies = {"color": [0, 0], "shape": [0, 0], "spatial": [0, 0]}
    for prompt, image in samples:
        parsed = parse_caption(prompt)
        if parsed is None:
            report.n_unparseable += 1
            report.per_prompt.append({"prompt": prompt, "status": "unparseable"})
            continue
        target_objs, relation = parsed
        pred = classify_image(image)
        if pred is REJECT:
            report.n_rejected += 1
        scores = _score_sample(target_objs, relation, pred)
        report.n_samples += 1
        for cat, ok in scores.items():
            if ok is not None:
                tallies[cat][1] += 1
                tallies[cat][0] += bool(ok)
        report.per_prompt.append(
            {"prompt": prompt, "status": "rejected" if pred is REJECT else "ok",
             **{k: v for k, v in scores.items() if v is not None}}
        )
    for cat, (hit, total) in tallies.items():
        if total:
            setattr(report, f"{cat}_accuracy", hit / total)
    return report


# -- Frechet feature distance -------------------------------------------------

@dataclass(frozen=True)
class FrechetConfig:
    extractor: str = "pooled_rgb_4x4"
    eps: float = 1e-6

    def __post_init__(self):
        if self.eps <= 0:
            raise ContractViolation("covariance regularization eps must be > 0")


def pooled_features(images) -> np.ndarray:
    """4x4 average-pooled RGB statistics, one 48-dim row per image."""
    feats = []
    for img in images:
        arr = np.asarray(img, dtype=np.float64)
        c, h, w = arr.shape
        ph, pw = h // 4, w // 4
        pooled = arr.reshape(c, 4, ph, 4, pw).mean(axis=(2, 4))
        feats.append(pooled.reshape(-1))
    return np.stack(feats)


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(features_a: np.ndarray, features_b: np.ndarray,
                     eps: float = 1e-6) -> float:
    """2-Wasserstein distance between Gaussian fits of two feature sets."""
    if eps <= 0:
        raise NumericalError(
            "covariance regularization eps must be > 0: empirical covariances of "
            "small or degenerate sample sets are rank-deficient and the matrix "
            "square root needs the eps ridge to stay PSD"
        )
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractViolation("feature sets must be [n, d] with matching d")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ContractViolation("need at least two feature rows per set")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    d = a.shape[1]
    cov_a = np.cov(a, rowvar=False).reshape(d, d) + eps * np.eye(d)
    cov_b = np.cov(b, rowvar=False).reshape(d, d) + eps * np.eye(d)
    sqrt_a = _sqrtm_psd(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if w.min() < -1e-6 * max(abs(w.max()), 1.0):
        raise NumericalError(
            "covariance product is not PSD; increase the regularization eps "
            f"(got eigenvalue {w.min():.3e})"
        )
    trace_term = np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sqrt(np.clip(w, 0, None)).sum()
    return float(max(((mu_a - mu_b) ** 2).sum() + trace_term, 0.0))
