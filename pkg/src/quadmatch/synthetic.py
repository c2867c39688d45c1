"""Synthetic keypoint-graph pair generator with controllable corruption.

Each *category* is a reusable object model: a canonical landmark
layout in the unit square plus a smooth descriptor field over it (a
kernel-weighted blend of per-landmark prototypes with a linear
coordinate component).  A *pair* is two views of one category: the
appearance of a keypoint is the field evaluated at its canonical
position (shared between views, up to jitter), while each view's
coordinates go through an independent small affine transform.
Coordinates alone therefore say little about who matches whom across
views; appearance carries the signal, as it does for detected
keypoints in photographs.

Corruption mimics sloppy annotation: a chosen fraction of keypoints is
displaced in its view plane by a random offset and the descriptor is
re-sampled from the field at the spot the annotation now points to
(pulled back through the view transform), while the recorded matching
keeps naming the old partner.  A displaced keypoint near another
landmark picks up that landmark's appearance, so the stale annotation
actively teaches a wrong correspondence -- the failure mode the robust
losses are meant to survive.

All randomness flows through ``numpy.random.default_rng`` seeds, so
every artifact here is reproducible bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assignment import Assignment
from .numcore import as_matrix

__all__ = [
    "Category",
    "GraphPair",
    "NoiseConfig",
    "make_category",
    "descriptor_field",
    "generate_pair",
    "inject_noise",
    "pair_features",
    "align_keypoints",
    "make_dataset",
    "save_dataset",
    "load_dataset",
]

DATASET_VERSION = 1


def _frozen(a, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Category:
    """An object model: landmark layout plus descriptor field.

    ``layout`` is ``(L, 2)`` canonical landmark coordinates in the unit
    square, ``prototypes`` is ``(L, d)`` appearance vectors, and
    ``coord_map`` is ``(d, 2)``, mixing a linear function of position
    into every descriptor.  ``kernel_width`` sets how quickly the field
    forgets a landmark's prototype with distance.
    """

    label: str
    layout: np.ndarray
    prototypes: np.ndarray
    coord_map: np.ndarray
    kernel_width: float

    def __post_init__(self):
        layout = _frozen(self.layout)
        prototypes = _frozen(self.prototypes)
        coord_map = _frozen(self.coord_map)
        if layout.ndim != 2 or layout.shape[1] != 2:
            raise ValueError(f"layout must be (L, 2), got {layout.shape}")
        if prototypes.shape[0] != layout.shape[0]:
            raise ValueError("one prototype per landmark required")
        if coord_map.shape != (prototypes.shape[1], 2):
            raise ValueError(
                f"coord_map must be ({prototypes.shape[1]}, 2), got {coord_map.shape}"
            )
        if self.kernel_width <= 0.0:
            raise ValueError(f"kernel_width must be positive, got {self.kernel_width}")
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "prototypes", prototypes)
        object.__setattr__(self, "coord_map", coord_map)

    @property
    def n_landmarks(self) -> int:
        return self.layout.shape[0]

    @property
    def d_desc(self) -> int:
        return self.prototypes.shape[1]


@dataclass(frozen=True)
class GraphPair:
    """Two views of one category with a ground-truth matching.

    Row ``i`` of the A-side arrays corresponds to row ``gt.cols[i]`` of
    the B-side arrays.  ``noise_flags[i]`` marks A-row ``i`` (and, for
    two-sided corruption, its B partner) as displaced after the
    annotation was fixed.  ``view_a`` / ``view_b`` record each view's
    affine map from canonical to view coordinates as a ``(2, 3)`` block
    ``[M | t]`` (acting as ``x @ M.T + t``); they default to the
    identity and let corruption convert an annotated position back into
    a field location.
    """

    coords_a: np.ndarray
    desc_a: np.ndarray
    coords_b: np.ndarray
    desc_b: np.ndarray
    gt: Assignment
    noise_flags: np.ndarray
    category: Category
    view_a: np.ndarray | None = None
    view_b: np.ndarray | None = None

    def __post_init__(self):
        n = self.gt.shape[0]
        ca = _frozen(self.coords_a)
        cb = _frozen(self.coords_b)
        da = _frozen(self.desc_a)
        db = _frozen(self.desc_b)
        flags = _frozen(self.noise_flags, dtype=bool)
        if ca.shape != (n, 2) or cb.shape != (self.gt.shape[1], 2):
            raise ValueError("coordinate shapes do not match the matching")
        if da.shape[0] != n or db.shape[0] != self.gt.shape[1]:
            raise ValueError("descriptor counts do not match the matching")
        if da.shape[1] != db.shape[1]:
            raise ValueError("descriptor dims differ between sides")
        if flags.shape != (n,):
            raise ValueError(f"noise_flags must have shape ({n},)")
        views = []
        for name, view in (("view_a", self.view_a), ("view_b", self.view_b)):
            view = _IDENTITY_VIEW if view is None else _frozen(view)
            if view.shape != (2, 3):
                raise ValueError(f"{name} must be a (2, 3) affine block")
            if abs(np.linalg.det(view[:, :2])) < 1e-12:
                raise ValueError(f"{name} is not invertible")
            views.append(view)
        for name, value in (
            ("coords_a", ca), ("coords_b", cb),
            ("desc_a", da), ("desc_b", db), ("noise_flags", flags),
            ("view_a", views[0]), ("view_b", views[1]),
        ):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.gt.shape[0]


@dataclass(frozen=True)
class NoiseConfig:
    """How to corrupt a pair: fraction, displacement range, seed."""

    eta: float
    s_min: float = 0.1
    s_max: float = 0.2
    seed: object = 0
    both_sides: bool = False

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.s_min <= self.s_max:
            raise ValueError("need 0 <= s_min <= s_max")


def make_category(
    label: str,
    n_landmarks: int,
    d_desc: int,
    seed,
    kernel_width: float = 0.06,
    min_separation: float = 0.14,
) -> Category:
    """Sample a category whose landmarks form a snug triangular grid.

    The layout is a patch of a triangular lattice with edge length
    ``min_separation``, randomly rotated and shifted about the square's
    center, with a whisper of per-landmark scatter so categories are
    not congruent.  Every landmark therefore has neighbours at roughly
    annotation-slip distance -- a sloppily placed keypoint plausibly
    lands on a neighbouring landmark rather than in empty space, the
    confusable geometry real keypoint sets (eyes, wheels, wingtips)
    exhibit.
    """
    if n_landmarks < 1 or d_desc < 1:
        raise ValueError("n_landmarks and d_desc must be positive")
    rng = np.random.default_rng(seed)
    n_cols = int(np.ceil(np.sqrt(n_landmarks)))
    cells = []
    row = 0
    while len(cells) < n_landmarks:
        for col in range(n_cols):
            cells.append((col + 0.5 * (row % 2), row * np.sqrt(3.0) / 2.0))
        row += 1
    pts = np.asarray(cells[:n_landmarks]) * min_separation
    pts = pts - pts.mean(axis=0)
    theta = rng.uniform(0.0, 2.0 * np.pi)
    c, s = np.cos(theta), np.sin(theta)
    pts = pts @ np.array([[c, -s], [s, c]]).T
    pts = pts + 0.5 + rng.uniform(-0.04, 0.04, size=2)
    pts = pts + rng.normal(0.0, 0.005, size=pts.shape)
    pts = np.clip(pts, 0.0, 1.0)
    prototypes = rng.normal(0.0, 1.0, size=(n_landmarks, d_desc))
    coord_map = rng.normal(0.0, 0.5, size=(d_desc, 2))
    return Category(label, pts, prototypes, coord_map, kernel_width)


def descriptor_field(category: Category, points) -> np.ndarray:
    """Evaluate the category's descriptor field at the given points.

    Prototype blend weights are a softmax of negative squared landmark
    distances scaled by ``kernel_width``, so near a landmark the field
    is dominated by that landmark's prototype; a linear function of the
    position is added on top.
    """
    pts = as_matrix(points, "points")
    if pts.shape[1] != 2:
        raise ValueError(f"points must be (k, 2), got {pts.shape}")
    diff = pts[:, None, :] - category.layout[None, :, :]
    logits = -(diff**2).sum(-1) / category.kernel_width**2
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)
    return weights @ category.prototypes + pts @ category.coord_map.T


_IDENTITY_VIEW = _frozen(np.hstack([np.eye(2), np.zeros((2, 1))]))


def _view_affine(rng: np.random.Generator, warp: float) -> np.ndarray:
    """Random rotation+scale about the square's center plus translation,
    packed as the ``[M | t]`` block used by :class:`GraphPair`."""
    angle = rng.uniform(-0.35 * warp, 0.35 * warp)
    scale = rng.uniform(1.0 - 0.15 * warp, 1.0 + 0.15 * warp)
    trans = rng.uniform(-0.1 * warp, 0.1 * warp, size=2)
    c, s = np.cos(angle), np.sin(angle)
    rot = scale * np.array([[c, -s], [s, c]])
    center = np.array([0.5, 0.5])
    offset = center - rot @ center + trans
    return np.hstack([rot, offset[:, None]])


def _affine_apply(view: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ view[:, :2].T + view[:, 2]


def _affine_pullback(view: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Map view coordinates back to canonical field coordinates."""
    return np.linalg.solve(view[:, :2], (points - view[:, 2]).T).T


def generate_pair(
    n: int | None,
    category: Category,
    jitter: float,
    seed,
    warp: float = 1.0,
) -> GraphPair:
    """Draw a clean two-view pair from a category.

    ``n`` keypoints are a random landmark subset (``None`` keeps all).
    Descriptors are the field at the canonical landmark positions plus
    per-view isotropic jitter, so appearance agrees across views; each
    view's coordinates go through their own small affine transform
    (clipped to the unit square).  The B side is stored in a random
    order and the returned matching records the correspondence.
    """
    rng = np.random.default_rng(seed)
    total = category.n_landmarks
    if n is None:
        n = total
    if not 1 <= n <= total:
        raise ValueError(f"n must be in [1, {total}], got {n}")
    if jitter < 0.0 or warp < 0.0:
        raise ValueError("jitter and warp must be nonnegative")
    chosen = np.sort(rng.choice(total, size=n, replace=False))
    base_pts = category.layout[chosen]
    base_desc = descriptor_field(category, base_pts)
    views = []
    coords = []
    descs = []
    for _ in range(2):
        view = _view_affine(rng, warp)
        views.append(view)
        coords.append(np.clip(_affine_apply(view, base_pts), 0.0, 1.0))
        descs.append(base_desc + jitter * rng.normal(size=base_desc.shape))
    gt_cols = rng.permutation(n)
    coords_b = np.empty_like(coords[1])
    desc_b = np.empty_like(descs[1])
    coords_b[gt_cols] = coords[1]
    desc_b[gt_cols] = descs[1]
    return GraphPair(
        coords_a=coords[0],
        desc_a=descs[0],
        coords_b=coords_b,
        desc_b=desc_b,
        gt=Assignment.from_cols(gt_cols, n),
        noise_flags=np.zeros(n, dtype=bool),
        category=category,
        view_a=views[0],
        view_b=views[1],
    )


def inject_noise(pair: GraphPair, cfg: NoiseConfig) -> GraphPair:
    """Displace a fraction of keypoints, keeping the stale annotation.

    ``floor(eta * n)`` A-side rows are chosen without replacement; each
    moves in its view plane by a polar offset with radius
    ``U(s_min, s_max)`` (clipped to the unit square) and has its
    descriptor re-sampled from the field at the spot the annotation now
    points to, i.e. the displaced position pulled back through the view
    transform.  With ``both_sides`` the B partners of the same rows are
    displaced too, with independent offsets.  The matching is returned
    unchanged and the moved rows are flagged.
    """
    rng = np.random.default_rng(cfg.seed)
    n = pair.n
    k = int(np.floor(cfg.eta * n))
    flags = np.zeros(n, dtype=bool)
    if k == 0:
        return GraphPair(
            pair.coords_a, pair.desc_a, pair.coords_b, pair.desc_b,
            pair.gt, flags, pair.category, pair.view_a, pair.view_b,
        )
    picked = rng.choice(n, size=k, replace=False)
    flags[picked] = True

    def displace(coords_row):
        radius = rng.uniform(cfg.s_min, cfg.s_max)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        offset = radius * np.array([np.cos(angle), np.sin(angle)])
        return np.clip(coords_row + offset, 0.0, 1.0)

    coords_a = pair.coords_a.copy()
    desc_a = pair.desc_a.copy()
    coords_b = pair.coords_b.copy()
    desc_b = pair.desc_b.copy()
    gt_cols = pair.gt.cols
    for i in sorted(picked):
        coords_a[i] = displace(coords_a[i])
        if cfg.both_sides:
            j = gt_cols[i]
            coords_b[j] = displace(coords_b[j])
    moved_a = sorted(picked)
    desc_a[moved_a] = descriptor_field(
        pair.category, _affine_pullback(pair.view_a, coords_a[moved_a])
    )
    if cfg.both_sides:
        moved_b = sorted(gt_cols[i] for i in picked)
        desc_b[moved_b] = descriptor_field(
            pair.category, _affine_pullback(pair.view_b, coords_b[moved_b])
        )
    return GraphPair(
        coords_a, desc_a, coords_b, desc_b,
        pair.gt, flags, pair.category, pair.view_a, pair.view_b,
    )


def pair_features(pair: GraphPair) -> tuple[np.ndarray, np.ndarray]:
    """Raw encoder inputs for both sides: descriptor and coordinates
    concatenated, in storage order (not matched up)."""
    x_a = np.hstack([pair.desc_a, pair.coords_a])
    x_b = np.hstack([pair.desc_b, pair.coords_b])
    return x_a, x_b


def align_keypoints(pair: GraphPair) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrices for both sides with corresponding rows.

    Same features as :func:`pair_features`, but the B side is reordered
    by the ground-truth matching so row ``i`` of both outputs describes
    the same landmark.
    """
    x_a, x_b = pair_features(pair)
    return x_a, x_b[pair.gt.cols]


def make_dataset(
    categories,
    pairs_per_category: int,
    seed: int,
    n: int | None = None,
    jitter: float = 0.02,
    warp: float = 1.0,
) -> list[GraphPair]:
    """Generate ``pairs_per_category`` clean pairs from each category."""
    if pairs_per_category < 1:
        raise ValueError("pairs_per_category must be positive")
    pairs = []
    for ci, category in enumerate(categories):
        for pi in range(pairs_per_category):
            pairs.append(
                generate_pair(n, category, jitter, seed=[seed, ci, pi], warp=warp)
            )
    return pairs


def _category_record(category: Category) -> dict:
    return {
        "label": category.label,
        "layout": category.layout.tolist(),
        "prototypes": category.prototypes.tolist(),
        "coord_map": category.coord_map.tolist(),
        "kernel_width": category.kernel_width,
    }


def _category_from_record(rec: dict) -> Category:
    return Category(
        rec["label"],
        np.asarray(rec["layout"]),
        np.asarray(rec["prototypes"]),
        np.asarray(rec["coord_map"]),
        float(rec["kernel_width"]),
    )


def save_dataset(pairs, path) -> None:
    """Write pairs as JSON lines, bit-exact on reload.

    The first line is a header carrying the format version and the
    category models; pair records reference categories by label.
    """
    categories: dict[str, Category] = {}
    for pair in pairs:
        label = pair.category.label
        if label in categories and categories[label] is not pair.category:
            raise ValueError(f"duplicate category label: {label!r}")
        categories[label] = pair.category
    lines = [
        json.dumps(
            {
                "kind": "header",
                "version": DATASET_VERSION,
                "categories": [_category_record(c) for c in categories.values()],
            }
        )
    ]
    for pair in pairs:
        lines.append(
            json.dumps(
                {
                    "kind": "pair",
                    "category": pair.category.label,
                    "coords_a": pair.coords_a.tolist(),
                    "desc_a": pair.desc_a.tolist(),
                    "coords_b": pair.coords_b.tolist(),
                    "desc_b": pair.desc_b.tolist(),
                    "gt_cols": pair.gt.cols.tolist(),
                    "noise_flags": pair.noise_flags.astype(int).tolist(),
                    "view_a": pair.view_a.tolist(),
                    "view_b": pair.view_b.tolist(),
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> list[GraphPair]:
    text = Path(path).read_text().strip()
    if not text:
        raise ValueError(f"dataset file {path} is empty")
    lines = text.split("\n")
    header = json.loads(lines[0])
    if header.get("kind") != "header":
        raise ValueError("dataset file does not start with a header record")
    if header.get("version") != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version: {header.get('version')}")
    categories = {
        rec["label"]: _category_from_record(rec) for rec in header["categories"]
    }
    pairs = []
    for line in lines[1:]:
        rec = json.loads(line)
        if rec.get("kind") != "pair":
            raise ValueError(f"unexpected record kind: {rec.get('kind')!r}")
        label = rec["category"]
        if label not in categories:
            raise ValueError(f"pair references unknown category {label!r}")
        gt_cols = np.asarray(rec["gt_cols"], dtype=np.int64)
        pairs.append(
            GraphPair(
                coords_a=np.asarray(rec["coords_a"]),
                desc_a=np.asarray(rec["desc_a"]),
                coords_b=np.asarray(rec["coords_b"]),
                desc_b=np.asarray(rec["desc_b"]),
                gt=Assignment.from_cols(gt_cols, gt_cols.size),
                noise_flags=np.asarray(rec["noise_flags"], dtype=bool),
                category=categories[label],
                view_a=np.asarray(rec["view_a"]),
                view_b=np.asarray(rec["view_b"]),
            )
        )
    return pairs
