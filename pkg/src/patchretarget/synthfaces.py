"""Procedural 2-D face characters with shared semantic expression units.

Characters are closed cubic-spline outlines over a small set of control
vertices.  Expressions are linear per-unit vertex offsets, so every
animation lies exactly in a low-dimensional affine subspace and PCA ground
truth is available by construction.  Source and target characters share the
same unit set but differ (deliberately, and a lot) in facial proportions.

Coordinates: model units, face centered near the origin, y grows downward
(same orientation as image rows).  Rendering is a flat-shaded orthographic
raster via scanline polygon fill with 2x supersampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from skimage.draw import disk as draw_disk
from skimage.draw import polygon as draw_polygon

from . import dataset as ds
from . import pca
from .exceptions import DataValidationError
from .hashing import stable_hash
from .types import SimilarityTransform2D

# Semantic expression units (activation 0 = neutral rest pose, eyes open).
EXPRESSION_UNITS = (
    "eye_close_left",
    "eye_close_right",
    "brow_raise_left",
    "brow_raise_right",
    "mouth_open",
    "mouth_wide",
    "mouth_pucker",
    "smile",
)
N_UNITS = len(EXPRESSION_UNITS)

MODEL_HALF = 1.45  # model-space half extent mapped onto the canvas


@dataclass(frozen=True)
class ExpressionParams:
    """Activation vector over EXPRESSION_UNITS, each in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != N_UNITS:
            raise DataValidationError(f"expected {N_UNITS} activations, got {v.size}")
        if (v < 0).any() or (v > 1).any():
            raise DataValidationError(f"activations outside [0, 1]: {v}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def neutral(cls) -> "ExpressionParams":
        return cls(np.zeros(N_UNITS))

    @classmethod
    def single(cls, unit: str, value: float) -> "ExpressionParams":
        v = np.zeros(N_UNITS)
        v[EXPRESSION_UNITS.index(unit)] = value
        return cls(v)

    @classmethod
    def from_dict(cls, activations: dict[str, float]) -> "ExpressionParams":
        v = np.zeros(N_UNITS)
        for name, val in activations.items():
            v[EXPRESSION_UNITS.index(name)] = val
        return cls(v)

    def __getitem__(self, unit: str) -> float:
        return float(self.values[EXPRESSION_UNITS.index(unit)])

    @property
    def is_neutral(self) -> bool:
        return bool((self.values == 0).all())


def script_hash(script: Sequence[ExpressionParams]) -> str:
    return stable_hash(np.stack([p.values for p in script]))


@dataclass(frozen=True)
class CharacterAsset:
    """A parametric synthetic character.

    ``control_vertices`` is the V x 2 neutral pose; ``offsets`` maps each
    expression unit to a V x 2 displacement table, already scaled by the
    per-element proportion factors.  The neutral pose is the anchor frame:
    all activations zero.
    """

    name: str
    control_vertices: np.ndarray
    element_vertex_map: dict[str, np.ndarray]
    landmark_vertex_indices: np.ndarray
    schema: dict[str, list[int]]
    offsets: dict[str, np.ndarray]
    style: dict[str, tuple[float, float, float]]
    proportion: dict[str, float]
    iris_radius: dict[str, float]

    def vertices_for(self, params: ExpressionParams) -> np.ndarray:
        v = self.control_vertices.copy()
        for unit, a in zip(EXPRESSION_UNITS, params.values):
            if a != 0.0:
                v += a * self.offsets[unit]
        return v

    @property
    def n_vertices(self) -> int:
        return self.control_vertices.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.landmark_vertex_indices.size

    def landmarks_from_vertices(self, vertices: np.ndarray) -> np.ndarray:
        return vertices[self.landmark_vertex_indices]


def _loop(cx: float, cy: float, rx: float, ry: float, n: int, phase: float = 0.0) -> np.ndarray:
    th = phase + 2 * np.pi * np.arange(n) / n
    return np.stack([cx + rx * np.cos(th), cy + ry * np.sin(th)], axis=1)


@dataclass(frozen=True)
class CharacterSpec:
    """Geometry + palette knobs for one character. Defaults are the canonical face."""

    name: str = "canonical"
    head: tuple[float, float, float, float] = (0.0, 0.02, 1.0, 1.15)  # cx, cy, rx, ry
    eye_center: tuple[float, float] = (0.42, -0.28)  # +x mirrored for left/right
    eye_radii: tuple[float, float] = (0.21, 0.12)
    brow_lift: float = 0.24  # brow center height above eye center
    brow_radii: tuple[float, float] = (0.26, 0.05)
    mouth_center: tuple[float, float] = (0.0, 0.52)
    mouth_radii: tuple[float, float] = (0.30, 0.14)
    inner_radii: tuple[float, float] = (0.22, 0.02)
    proportion: dict[str, float] = field(default_factory=dict)  # per-element scale
    colors: dict[str, tuple[float, float, float]] = field(default_factory=dict)


_DEFAULT_COLORS = {
    "background": (0.93, 0.91, 0.88),
    "face": (0.87, 0.72, 0.60),
    "eye_white": (0.98, 0.98, 0.96),
    "iris": (0.35, 0.22, 0.10),
    "pupil": (0.05, 0.05, 0.05),
    "brow": (0.25, 0.15, 0.08),
    "lips": (0.75, 0.35, 0.30),
    "mouth_interior": (0.25, 0.06, 0.09),
    "outline": (0.30, 0.18, 0.12),
}

# element scale factor applied about each element's neutral centroid
_ELEMENT_OF_VERTEX_GROUPS = (
    ("head", "head"),
    ("left_eye", "left_eye"),
    ("right_eye", "right_eye"),
    ("left_brow", "left_brow"),
    ("right_brow", "right_brow"),
    ("lips_outer", "lips"),
    ("mouth_inner", "lips"),
)


def build_character(spec: CharacterSpec) -> CharacterAsset:
    ex, ey = spec.eye_center
    erx, ery = spec.eye_radii
    brx, bry = spec.brow_radii
    mcx, mcy = spec.mouth_center
    mrx, mry = spec.mouth_radii
    irx, iry = spec.inner_radii

    groups: dict[str, np.ndarray] = {}
    verts_list: list[np.ndarray] = []

    def add(name: str, pts: np.ndarray) -> None:
        start = sum(v.shape[0] for v in verts_list)
        groups[name] = np.arange(start, start + pts.shape[0])
        verts_list.append(pts)

    add("head", _loop(*spec.head, n=16))
    add("left_eye", _loop(-ex, ey, erx, ery, n=8))
    add("right_eye", _loop(ex, ey, erx, ery, n=8))
    add("left_brow", _loop(-ex, ey - spec.brow_lift, brx, bry, n=6))
    add("right_brow", _loop(ex, ey - spec.brow_lift, brx, bry, n=6))
    add("lips_outer", _loop(mcx, mcy, mrx, mry, n=12))
    add("mouth_inner", _loop(mcx, mcy, irx, iry, n=8))
    verts = np.concatenate(verts_list, axis=0)

    offsets = {u: np.zeros_like(verts) for u in EXPRESSION_UNITS}

    def loop_angles(name: str) -> np.ndarray:
        idx = groups[name]
        n = idx.size
        return 2 * np.pi * np.arange(n) / n

    # eye closure: squash the loop vertically to 10% of its neutral extent
    for side, eye in (("left", "left_eye"), ("right", "right_eye")):
        th = loop_angles(eye)
        offsets[f"eye_close_{side}"][groups[eye], 1] = -0.9 * ery * np.sin(th)

    # brow raise: lift plus a mild central arch
    for side, brow in (("left", "left_brow"), ("right", "right_brow")):
        th = loop_angles(brow)
        offsets[f"brow_raise_{side}"][groups[brow], 1] = -0.14 - 0.05 * np.abs(np.sin(th))

    th_o = loop_angles("lips_outer")
    th_i = loop_angles("mouth_inner")
    io, ii = groups["lips_outer"], groups["mouth_inner"]

    # jaw drop: lower lip down, inner contour opens into a cavity
    offsets["mouth_open"][io, 1] = 0.26 * np.maximum(np.sin(th_o), 0.0)
    offsets["mouth_open"][ii, 1] = 0.22 * np.maximum(np.sin(th_i), 0.0) + 0.03 * np.minimum(np.sin(th_i), 0.0)

    # corner stretch / pucker / smile act mostly on the corner vertices
    offsets["mouth_wide"][io, 0] = 0.15 * np.cos(th_o) ** 3
    offsets["mouth_wide"][ii, 0] = 0.12 * np.cos(th_i) ** 3

    offsets["mouth_pucker"][io, 0] = -0.16 * np.cos(th_o)
    offsets["mouth_pucker"][ii, 0] = -0.13 * np.cos(th_i)
    offsets["mouth_pucker"][io, 1] = 0.05 * np.sin(th_o)

    offsets["smile"][io, 0] = 0.06 * np.cos(th_o) ** 3
    offsets["smile"][io, 1] = -0.12 * np.abs(np.cos(th_o)) ** 3
    offsets["smile"][ii, 0] = 0.05 * np.cos(th_i) ** 3
    offsets["smile"][ii, 1] = -0.09 * np.abs(np.cos(th_i)) ** 3

    # per-element proportion scaling about the element centroid, offsets included
    proportion = {el: float(spec.proportion.get(el, 1.0)) for _, el in _ELEMENT_OF_VERTEX_GROUPS}
    for group, el in _ELEMENT_OF_VERTEX_GROUPS:
        s = proportion[el]
        if s == 1.0:
            continue
        idx = groups[group]
        center = verts[idx].mean(axis=0)
        verts[idx] = center + s * (verts[idx] - center)
        for u in EXPRESSION_UNITS:
            offsets[u][idx] *= s

    landmark_vertex_indices = np.concatenate(
        [
            groups["left_eye"],
            groups["right_eye"],
            groups["left_brow"],
            groups["right_brow"],
            groups["lips_outer"],
            groups["head"][[0, 4, 8, 12]],
        ]
    )
    schema: dict[str, list[int]] = {}
    cursor = 0
    for el, count in (
        ("left_eye", 8),
        ("right_eye", 8),
        ("left_brow", 6),
        ("right_brow", 6),
        ("lips", 12),
    ):
        schema[el] = list(range(cursor, cursor + count))
        cursor += count
    schema["face"] = list(range(landmark_vertex_indices.size))

    colors = dict(_DEFAULT_COLORS)
    colors.update(spec.colors)
    eye_scale = proportion["left_eye"]
    iris_radius = {
        "left_eye": 0.42 * erx * eye_scale,
        "right_eye": 0.42 * erx * proportion["right_eye"],
    }

    verts.flags.writeable = False
    lm = landmark_vertex_indices
    lm.flags.writeable = False
    for o in offsets.values():
        o.flags.writeable = False
    return CharacterAsset(
        name=spec.name,
        control_vertices=verts,
        element_vertex_map={k: v for k, v in groups.items()},
        landmark_vertex_indices=lm,
        schema=schema,
        offsets=offsets,
        style=colors,
        proportion=proportion,
        iris_radius=iris_radius,
    )


def make_character(name: str) -> CharacterAsset:
    """Built-in characters: "perf" (source proxy), "alpha", "beta" (targets)."""
    if name == "perf":
        return build_character(CharacterSpec(name="perf"))
    if name == "alpha":
        # round head, oversized eyes, small mouth
        return build_character(
            CharacterSpec(
                name="alpha",
                head=(0.0, 0.0, 1.08, 1.05),
                eye_center=(0.40, -0.22),
                mouth_center=(0.0, 0.56),
                proportion={"left_eye": 1.6, "right_eye": 1.6, "lips": 0.62,
                            "left_brow": 1.2, "right_brow": 1.2},
                colors={
                    "background": (0.15, 0.17, 0.22),
                    "face": (0.56, 0.76, 0.90),
                    "iris": (0.10, 0.45, 0.30),
                    "brow": (0.10, 0.15, 0.35),
                    "lips": (0.80, 0.30, 0.45),
                    "mouth_interior": (0.30, 0.08, 0.15),
                    "outline": (0.12, 0.20, 0.35),
                },
            )
        )
    if name == "beta":
        # slim head, small eyes, very wide mouth
        return build_character(
            CharacterSpec(
                name="beta",
                head=(0.0, 0.05, 0.90, 1.18),
                eye_center=(0.34, -0.36),
                mouth_center=(0.0, 0.50),
                proportion={"left_eye": 0.62, "right_eye": 0.62, "lips": 1.55,
                            "left_brow": 0.8, "right_brow": 0.8},
                colors={
                    "background": (0.94, 0.88, 0.78),
                    "face": (0.93, 0.62, 0.42),
                    "iris": (0.40, 0.15, 0.40),
                    "brow": (0.35, 0.12, 0.05),
                    "lips": (0.55, 0.12, 0.18),
                    "mouth_interior": (0.20, 0.03, 0.06),
                    "outline": (0.45, 0.22, 0.10),
                },
            )
        )
    raise DataValidationError(f"unknown built-in character {name!r}")


# --- rendering ----------------------------------------------------------------

def _sample_loop(pts: np.ndarray, per_edge: int = 8) -> np.ndarray:
    n = pts.shape[0]
    t = np.arange(n + 1, dtype=np.float64)
    closed = np.vstack([pts, pts[:1]])
    sx = CubicSpline(t, closed[:, 0], bc_type="periodic")
    sy = CubicSpline(t, closed[:, 1], bc_type="periodic")
    ts = np.linspace(0.0, n, n * per_edge, endpoint=False)
    return np.stack([sx(ts), sy(ts)], axis=1)


def _model_to_px(pts: np.ndarray, size: int) -> np.ndarray:
    return (pts + MODEL_HALF) * (size / (2.0 * MODEL_HALF)) - 0.5


def _fill(img: np.ndarray, pts_px: np.ndarray, color) -> np.ndarray:
    rr, cc = draw_polygon(pts_px[:, 1], pts_px[:, 0], shape=img.shape[:2])
    img[rr, cc] = color
    return img


def _fill_mask(shape: tuple[int, int], pts_px: np.ndarray) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    rr, cc = draw_polygon(pts_px[:, 1], pts_px[:, 0], shape=shape)
    mask[rr, cc] = True
    return mask


def _stroke(img: np.ndarray, pts_px: np.ndarray, color, radius: float) -> None:
    for x, y in pts_px:
        rr, cc = draw_disk((y, x), radius, shape=img.shape[:2])
        img[rr, cc] = color


def render_frame(asset: CharacterAsset, vertices: np.ndarray, canvas: int = 512, supersample: int = 2) -> np.ndarray:
    """Flat-shaded raster of one pose; returns HxWx3 uint8."""
    s = canvas * supersample
    style = asset.style
    img = np.empty((s, s, 3), dtype=np.float32)
    img[:] = style["background"]

    def loop_px(group: str) -> np.ndarray:
        pts = _sample_loop(vertices[asset.element_vertex_map[group]])
        return _model_to_px(pts, s)

    stroke_r = max(1.0, 0.004 * s)
    _fill(img, loop_px("head"), style["face"])
    for brow in ("left_brow", "right_brow"):
        _fill(img, loop_px(brow), style["brow"])
    for eye in ("left_eye", "right_eye"):
        outline = loop_px(eye)
        mask = _fill_mask(img.shape[:2], outline)
        img[mask] = style["eye_white"]
        center_m = vertices[asset.element_vertex_map[eye]].mean(axis=0)
        center = _model_to_px(center_m[None, :], s)[0]
        scale_px = s / (2.0 * MODEL_HALF)
        for color_key, frac in (("iris", 1.0), ("pupil", 0.45)):
            rr, cc = draw_disk(
                (center[1], center[0]), asset.iris_radius[eye] * frac * scale_px, shape=img.shape[:2]
            )
            keep = mask[rr, cc]
            img[rr[keep], cc[keep]] = style[color_key]
        _stroke(img, outline, style["outline"], stroke_r)
    lips = loop_px("lips_outer")
    _fill(img, lips, style["lips"])
    _fill(img, loop_px("mouth_inner"), style["mouth_interior"])
    _stroke(img, lips, style["outline"], stroke_r)

    if supersample > 1:
        img = img.reshape(canvas, supersample, canvas, supersample, 3).mean(axis=(1, 3))
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def synthesize_animation(
    asset: CharacterAsset,
    script: Sequence[ExpressionParams],
    canvas: int = 512,
    supersample: int = 2,
    head_motion: Optional[Sequence[SimilarityTransform2D]] = None,
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Render a script into (vertices, landmarks, image) triples.

    Vertices are the linear offset model evaluated per frame (model units);
    landmarks are the pixel-space projections of the landmark vertices; the
    image is the flat-shaded raster.  ``head_motion``, when given, applies a
    per-frame rigid similarity in model space (source-video stand-in).
    """
    if len(script) == 0:
        raise DataValidationError("script must contain at least one frame")
    if head_motion is not None and len(head_motion) != len(script):
        raise DataValidationError("head_motion length must match script length")
    out = []
    for i, params in enumerate(script):
        v = asset.vertices_for(params)
        if head_motion is not None:
            v = head_motion[i].apply(v)
        img = render_frame(asset, v, canvas=canvas, supersample=supersample)
        lm = _model_to_px(asset.landmarks_from_vertices(v), canvas)
        out.append((v, lm, img))
    return out


# --- scripts ------------------------------------------------------------------

def make_rom_script(steps: int) -> list[ExpressionParams]:
    """Range-of-motion sweep: neutral, per-unit 0->1->0 ramps, pairwise maxima.

    Length is ``1 + N*(2*steps - 1) + C(N, 2)`` and the first frame is
    neutral, matching the anchor-frame convention.
    """
    if steps < 2:
        raise DataValidationError("steps must be >= 2")
    script = [ExpressionParams.neutral()]
    ramp = np.concatenate([np.linspace(0.0, 1.0, steps), np.linspace(1.0, 0.0, steps)[1:]])
    for u, unit in enumerate(EXPRESSION_UNITS):
        for a in ramp:
            v = np.zeros(N_UNITS)
            v[u] = a
            script.append(ExpressionParams(v))
    for i in range(N_UNITS):
        for j in range(i + 1, N_UNITS):
            v = np.zeros(N_UNITS)
            v[i] = 1.0
            v[j] = 1.0
            script.append(ExpressionParams(v))
    return script


def make_training_script(n_frames: int, steps: int = 5, seed: int = 0) -> list[ExpressionParams]:
    """ROM sweep padded with random sparse expressions up to ``n_frames``."""
    script = make_rom_script(steps)
    rng = np.random.default_rng(seed)
    while len(script) < n_frames:
        if len(script) % 16 == 0:
            script.append(ExpressionParams.neutral())
            continue
        k = int(rng.integers(1, 4))
        units = rng.choice(N_UNITS, size=k, replace=False)
        v = np.zeros(N_UNITS)
        v[units] = rng.uniform(0.2, 1.0, size=k)
        script.append(ExpressionParams(v))
    return script[:n_frames]


def make_eval_script(n_frames: int, seed: int = 0) -> list[ExpressionParams]:
    """Smooth flowing animation: staggered half-sine activations per unit."""
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(0.5, 1.6, size=N_UNITS)
    phases = rng.uniform(0, 2 * np.pi, size=N_UNITS)
    gates = rng.uniform(0.4, 1.0, size=N_UNITS)
    t = np.linspace(0.0, 2.0 * np.pi, n_frames)
    script = []
    for i in range(n_frames):
        raw = np.sin(freqs * t[i] + phases)
        v = np.clip(raw, 0.0, 1.0) * gates
        script.append(ExpressionParams(v))
    return script


def make_head_motion(
    n_frames: int, seed: int = 0, rot_max: float = 0.06, trans_max: float = 0.05, scale_range: float = 0.02
) -> list[SimilarityTransform2D]:
    """Smooth sinusoidal rigid jitter in model units (source head-pose stand-in)."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 2 * np.pi, n_frames)
    f = rng.uniform(0.7, 2.3, size=4)
    ph = rng.uniform(0, 2 * np.pi, size=4)
    rot = rot_max * np.sin(f[0] * t + ph[0])
    tx = trans_max * np.sin(f[1] * t + ph[1])
    ty = trans_max * np.sin(f[2] * t + ph[2])
    sc = 1.0 + scale_range * np.sin(f[3] * t + ph[3])
    return [
        SimilarityTransform2D(rotation=float(rot[i]), scale=float(sc[i]), translation=(float(tx[i]), float(ty[i])))
        for i in range(n_frames)
    ]


# --- dataset emission -----------------------------------------------------------

def generate_dataset(
    asset: CharacterAsset,
    script: Sequence[ExpressionParams],
    root: Path,
    role: str,
    canvas: int = 512,
    supersample: int = 2,
    head_motion: Optional[Sequence[SimilarityTransform2D]] = None,
    max_components: int = 20,
    variance_target: float = 0.999,
    brightness: float = 1.0,
) -> dict:
    """Synthesize a script and write it in the standard dataset layout.

    Target-role datasets additionally get PCA ground truth: weights.csv,
    the persisted basis, and the raw vertex matrix (vertices.csv) used for
    vertex-error evaluation.  ``brightness`` scales the palette to fake a
    different lighting condition.  Returns the manifest.
    """
    root = Path(root)
    if brightness != 1.0:
        style = {k: tuple(np.clip(np.asarray(v) * brightness, 0.0, 1.0)) for k, v in asset.style.items()}
        asset = CharacterAsset(
            name=asset.name,
            control_vertices=asset.control_vertices,
            element_vertex_map=asset.element_vertex_map,
            landmark_vertex_indices=asset.landmark_vertex_indices,
            schema=asset.schema,
            offsets=asset.offsets,
            style=style,
            proportion=asset.proportion,
            iris_radius=asset.iris_radius,
        )
    frames = synthesize_animation(asset, script, canvas=canvas, supersample=supersample, head_motion=head_motion)
    vertices = np.stack([v.ravel() for v, _, _ in frames])
    landmarks = [lm for _, lm, _ in frames]
    images = [img for _, _, img in frames]

    manifest = {
        "character": asset.name,
        "role": role,
        "canvas": canvas,
        "supersample": supersample,
        "n_frames": len(frames),
        "n_landmarks": int(asset.n_landmarks),
        "script_hash": script_hash(script),
        "head_motion": head_motion is not None,
        "brightness": brightness,
    }
    weights = None
    if role == "target":
        basis, weights = pca.decompose(vertices, max_components=max_components, variance_target=variance_target)
        pca.save_basis(root, basis)
        np.savetxt(root / "vertices.csv", vertices, delimiter=",", fmt="%.17g")
        manifest["n_components"] = int(basis.n_components)
        manifest["basis_hash"] = basis.fingerprint()
    ds.save_dataset(root, images, landmarks, weights=weights, manifest=manifest, schema=asset.schema)
    return manifest
