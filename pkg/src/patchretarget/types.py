"""Core domain types shared by every stage of the retargeting pipeline.

Conventions used throughout the package:

* Images are ``H x W x 3`` arrays, ``uint8`` on disk and at the dataset
  boundary, ``float32`` in ``[0, 1]`` inside the learning modules.  The
  conversion happens exactly once, at patch extraction.
* Landmarks and all other point sets are ``K x 2`` float64 arrays of
  ``(x, y)`` pixel coordinates, pixel centers at integer positions,
  x growing right and y growing down.
* Weight vectors are plain 1-D float64 arrays whose length matches the
  blendshape basis they pair with.

All types freeze their array payloads at construction (``writeable=False``)
so instances can be shared across parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError, DataValidationError, GeometryError
from .hashing import stable_hash

FaceElement = str

# Elements used to fit the per-frame canonical alignment of the source face.
# This set is fixed no matter which elements are retargeted.
ALIGNMENT_ELEMENTS: tuple[FaceElement, ...] = ("left_eye", "right_eye", "lips")

PATCH_SIZE_DEFAULT = 128


def _frozen(a: np.ndarray, dtype=None) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a:
        out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PatchLayout:
    """Ordered set of face elements that get their own patch.

    The order is fixed at configuration time and must be identical between
    source and target: the weight estimator concatenates patches channel-wise
    in this order.
    """

    elements: tuple[FaceElement, ...]

    def __post_init__(self):
        if len(self.elements) < 1:
            raise ConfigurationError("a patch layout needs at least one element")
        if len(set(self.elements)) != len(self.elements):
            raise ConfigurationError(f"duplicate element ids in layout: {self.elements}")
        object.__setattr__(self, "elements", tuple(self.elements))

    def __len__(self) -> int:
        return len(self.elements)

    def index(self, element: FaceElement) -> int:
        return self.elements.index(element)


STANDARD_LAYOUT = PatchLayout(("left_eye", "right_eye", "lips"))
BROW_LAYOUT = PatchLayout(("left_eye", "right_eye", "lips", "left_brow", "right_brow"))


def validate_layout(
    layout: PatchLayout, landmark_schema: Mapping[FaceElement, Sequence[int]], n_landmarks: Optional[int] = None
) -> dict[FaceElement, np.ndarray]:
    """Check a landmark schema against a layout and return it normalized.

    Every element in ``layout`` needs a non-empty index list, and the three
    alignment elements must be present in the schema even when they are not
    retargeted themselves.
    """
    schema = {str(k): np.asarray(v, dtype=np.int64) for k, v in landmark_schema.items()}
    for el in ALIGNMENT_ELEMENTS:
        if el not in schema:
            raise ConfigurationError(
                f"landmark schema is missing alignment element {el!r}; "
                f"alignment always needs {ALIGNMENT_ELEMENTS}"
            )
    for el in layout.elements:
        if el not in schema:
            raise ConfigurationError(f"layout element {el!r} has no landmark indices in the schema")
    for el, idx in schema.items():
        if idx.ndim != 1 or idx.size == 0:
            raise ConfigurationError(f"landmark index list for {el!r} must be a non-empty 1-D sequence")
        if (idx < 0).any():
            raise ConfigurationError(f"negative landmark index for {el!r}")
        if n_landmarks is not None and (idx >= n_landmarks).any():
            raise ConfigurationError(
                f"landmark index out of range for {el!r}: max {int(idx.max())} >= K={n_landmarks}"
            )
    return schema


def layout_fingerprint(
    layout: PatchLayout, patch_size: int, schema: Mapping[FaceElement, Sequence[int]]
) -> str:
    """Hash that trained artifacts embed so cross-artifact mixups are caught."""
    return stable_hash(
        {
            "elements": list(layout.elements),
            "patch_size": int(patch_size),
            "schema": {k: [int(i) for i in v] for k, v in schema.items()},
        }
    )


@dataclass(frozen=True)
class Frame:
    """One video/animation frame: RGB image, its 2-D landmarks, optional weights."""

    image: np.ndarray
    landmarks: np.ndarray
    index: int
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise DataValidationError(
                f"frame {self.index}: image must be HxWx3 uint8, got shape {img.shape} dtype {img.dtype}"
            )
        lm = np.asarray(self.landmarks, dtype=np.float64)
        if lm.ndim != 2 or lm.shape[1] != 2:
            raise DataValidationError(f"frame {self.index}: landmarks must be Kx2, got {lm.shape}")
        h, w = img.shape[:2]
        if (lm[:, 0] < -0.5).any() or (lm[:, 0] > w - 0.5).any() or (lm[:, 1] < -0.5).any() or (lm[:, 1] > h - 0.5).any():
            raise DataValidationError(f"frame {self.index}: landmarks outside image bounds {w}x{h}")
        object.__setattr__(self, "image", _frozen(img))
        object.__setattr__(self, "landmarks", _frozen(lm))
        if self.weights is not None:
            wv = np.asarray(self.weights, dtype=np.float64)
            if wv.ndim != 1:
                raise DataValidationError(f"frame {self.index}: weights must be 1-D, got {wv.shape}")
            object.__setattr__(self, "weights", _frozen(wv))

    @property
    def size(self) -> tuple[int, int]:
        """(width, height) in pixels."""
        return self.image.shape[1], self.image.shape[0]


PATCH_ORIGINS = ("source", "target", "reenacted", "reconstructed")


@dataclass(frozen=True)
class Patch:
    """A square RGB crop of one face element in canonical alignment, float [0, 1]."""

    pixels: np.ndarray
    element: FaceElement
    origin: str

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] != px.shape[1]:
            raise DataValidationError(f"patch must be SxSx3, got {px.shape}")
        if self.origin not in PATCH_ORIGINS:
            raise DataValidationError(f"unknown patch origin {self.origin!r}; expected one of {PATCH_ORIGINS}")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class SimilarityTransform2D:
    """Rotation + uniform scale + translation, applied as ``p -> s R p + t``."""

    rotation: float = 0.0
    scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.scale > 0):
            raise GeometryError(f"similarity scale must be positive, got {self.scale}")
        object.__setattr__(self, "rotation", float(self.rotation))
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "translation", (float(self.translation[0]), float(self.translation[1])))

    @property
    def matrix(self) -> np.ndarray:
        """2x3 affine matrix mapping input points to output points."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        tx, ty = self.translation
        return np.array(
            [[self.scale * c, -self.scale * s, tx], [self.scale * s, self.scale * c, ty]], dtype=np.float64
        )

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "SimilarityTransform2D":
        m = np.asarray(m, dtype=np.float64)
        scale = math.hypot(m[0, 0], m[1, 0])
        rotation = math.atan2(m[1, 0], m[0, 0])
        return cls(rotation=rotation, scale=scale, translation=(m[0, 2], m[1, 2]))

    @classmethod
    def identity(cls) -> "SimilarityTransform2D":
        return cls()

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        m = self.matrix
        return pts @ m[:, :2].T + m[:, 2]

    def compose(self, inner: "SimilarityTransform2D") -> "SimilarityTransform2D":
        """Return the transform equivalent to applying ``inner`` first, then self."""
        rot = self.rotation + inner.rotation
        scale = self.scale * inner.scale
        t = self.apply(np.asarray([inner.translation]))[0]
        # self.apply already maps inner's translation through s R and adds self.t
        return SimilarityTransform2D(rotation=rot, scale=scale, translation=(t[0], t[1]))

    def inverse(self) -> "SimilarityTransform2D":
        inv_scale = 1.0 / self.scale
        c, s = math.cos(-self.rotation), math.sin(-self.rotation)
        tx, ty = self.translation
        itx = -inv_scale * (c * tx - s * ty)
        ity = -inv_scale * (s * tx + c * ty)
        return SimilarityTransform2D(rotation=-self.rotation, scale=inv_scale, translation=(itx, ity))

    def is_identity(self, tol: float = 0.0) -> bool:
        tx, ty = self.translation
        return (
            abs(self.rotation) <= tol and abs(self.scale - 1.0) <= tol and abs(tx) <= tol and abs(ty) <= tol
        )


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates, min exclusive of max."""

    min: tuple[float, float]
    max: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "min", (float(self.min[0]), float(self.min[1])))
        object.__setattr__(self, "max", (float(self.max[0]), float(self.max[1])))
        if not (self.max[0] > self.min[0] and self.max[1] > self.min[1]):
            raise GeometryError(f"bounding box must have positive extent: min={self.min} max={self.max}")

    @classmethod
    def of_points(cls, points: np.ndarray) -> "BoundingBox":
        pts = np.asarray(points, dtype=np.float64)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        # an axis-degenerate cloud still yields a usable box
        pad = np.where(hi - lo <= 0, 1e-9, 0.0)
        return cls(min=(lo[0] - pad[0], lo[1] - pad[1]), max=(hi[0] + pad[0], hi[1] + pad[1]))

    @property
    def width(self) -> float:
        return self.max[0] - self.min[0]

    @property
    def height(self) -> float:
        return self.max[1] - self.min[1]

    @property
    def center(self) -> tuple[float, float]:
        return ((self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0)

    def contains(self, points: np.ndarray, strict: bool = False) -> bool:
        pts = np.asarray(points, dtype=np.float64)
        if strict:
            ok_x = (pts[:, 0] > self.min[0]) & (pts[:, 0] < self.max[0])
            ok_y = (pts[:, 1] > self.min[1]) & (pts[:, 1] < self.max[1])
        else:
            ok_x = (pts[:, 0] >= self.min[0]) & (pts[:, 0] <= self.max[0])
            ok_y = (pts[:, 1] >= self.min[1]) & (pts[:, 1] <= self.max[1])
        return bool((ok_x & ok_y).all())

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            min=(min(self.min[0], other.min[0]), min(self.min[1], other.min[1])),
            max=(max(self.max[0], other.max[0]), max(self.max[1], other.max[1])),
        )

    def squared(self) -> "BoundingBox":
        """Smallest square box with the same center containing this box."""
        side = max(self.width, self.height)
        cx, cy = self.center
        h = side / 2.0
        return BoundingBox(min=(cx - h, cy - h), max=(cx + h, cy + h))

    def expanded(self, amount_x: float, amount_y: float) -> "BoundingBox":
        return BoundingBox(
            min=(self.min[0] - amount_x, self.min[1] - amount_y),
            max=(self.max[0] + amount_x, self.max[1] + amount_y),
        )


@dataclass(frozen=True)
class BlendshapeBasis:
    """Linear blendshape system: mean vertex vector + orthonormal basis rows.

    ``basis`` is D x M where M is the stacked vertex-coordinate dimension;
    a pose is reconstructed as ``mean + weights @ basis``.
    """

    mean: np.ndarray
    basis: np.ndarray
    explained_variance_ratio: np.ndarray
    truncation_rmse: float = 0.0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        basis = np.asarray(self.basis, dtype=np.float64)
        evr = np.asarray(self.explained_variance_ratio, dtype=np.float64).ravel()
        if basis.ndim != 2 or basis.shape[1] != mean.size:
            raise DataValidationError(f"basis must be DxM with M={mean.size}, got {basis.shape}")
        if evr.size != basis.shape[0]:
            raise DataValidationError("explained_variance_ratio length must equal component count")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "basis", _frozen(basis))
        object.__setattr__(self, "explained_variance_ratio", _frozen(evr))
        object.__setattr__(self, "truncation_rmse", float(self.truncation_rmse))

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]

    @property
    def n_dims(self) -> int:
        return self.basis.shape[1]

    def fingerprint(self) -> str:
        return stable_hash({"mean": self.mean, "basis": self.basis})
