"""Automatic patch extraction: alignment, ROM boxes, and 128x128 crops.

Source frames are aligned per frame into a canonical pose via a
least-squares similarity transform fitted on the eye/mouth centers; the
target is aligned once, per element, from its anchor (all-rig-zero) frame
onto the source's neutral frame.  Element bounding boxes enclose the full
range of motion observed over the training data, expanded by a jitter
margin and squared to the patch aspect ratio.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import dataset as ds
from .exceptions import ConfigurationError, DataLoadError, GeometryError
from .imageops import to_float, warp_affine
from .types import (
    ALIGNMENT_ELEMENTS,
    BoundingBox,
    FaceElement,
    Frame,
    Patch,
    PatchLayout,
    SimilarityTransform2D,
    layout_fingerprint,
    validate_layout,
)


# --- landmark detectors ---------------------------------------------------------

class GroundTruthDetector:
    """Returns the landmarks already attached to each frame (synthetic data)."""

    def __call__(self, frame: Frame) -> np.ndarray:
        return frame.landmarks


class ExternalDetector:
    """Reads landmarks precomputed by an off-the-shelf tool into landmarks.json."""

    def __init__(self, path: Path):
        self._landmarks = ds.load_landmarks(Path(path))

    def __call__(self, frame: Frame) -> np.ndarray:
        if frame.index >= len(self._landmarks):
            raise DataLoadError(f"no precomputed landmarks for frame {frame.index}")
        return self._landmarks[frame.index]


# --- geometry -------------------------------------------------------------------

def element_centers(landmarks: np.ndarray, schema: Mapping[FaceElement, Sequence[int]]) -> np.ndarray:
    """Mean landmark coordinate of left eye, right eye, and lips (3x2)."""
    lm = np.asarray(landmarks, dtype=np.float64)
    rows = []
    for el in ALIGNMENT_ELEMENTS:
        idx = np.asarray(schema[el], dtype=np.int64)
        if idx.size == 0:
            raise ConfigurationError(f"empty landmark index list for {el!r}")
        rows.append(lm[idx].mean(axis=0))
    return np.stack(rows)


def fit_similarity(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform2D:
    """Least-squares similarity (rotation + uniform scale + translation) src -> dst."""
    p = np.asarray(src, dtype=np.float64)
    q = np.asarray(dst, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[0] < 2:
        raise GeometryError(f"need matching Nx2 point sets with N >= 2, got {p.shape} vs {q.shape}")
    mp = p.mean(axis=0)
    mq = q.mean(axis=0)
    pc = p - mp
    qc = q - mq
    var_p = (pc**2).sum() / p.shape[0]
    if var_p < 1e-18:
        raise GeometryError("source points are coincident; similarity fit is degenerate")
    cov = qc.T @ pc / p.shape[0]
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    corr = np.diag([1.0, d])
    r = u @ corr @ vt
    scale = float((s * np.diag(corr)).sum() / var_p)
    if scale <= 0 or not np.isfinite(scale):
        raise GeometryError("similarity fit produced a non-positive scale (degenerate geometry)")
    rotation = math.atan2(r[1, 0], r[0, 0])
    t = mq - scale * (r @ mp)
    return SimilarityTransform2D(rotation=rotation, scale=scale, translation=(float(t[0]), float(t[1])))


@dataclass(frozen=True)
class AlignmentModel:
    """Canonical eye/eye/mouth triangle plus the face crop box around it."""

    canonical_triangle: np.ndarray
    face_crop_box: BoundingBox

    def __post_init__(self):
        tri = np.asarray(self.canonical_triangle, dtype=np.float64)
        if tri.shape != (3, 2):
            raise GeometryError(f"canonical triangle must be 3x2, got {tri.shape}")
        area = 0.5 * abs(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
        if area <= 1e-9:
            raise GeometryError("canonical triangle is degenerate (zero area)")
        tri = tri.copy()
        tri.flags.writeable = False
        object.__setattr__(self, "canonical_triangle", tri)

    @classmethod
    def from_neutral_frame(
        cls, landmarks: np.ndarray, schema: Mapping[FaceElement, Sequence[int]], crop_margin: float = 0.25
    ) -> "AlignmentModel":
        """Canonical space anchored at the neutral source frame's own geometry."""
        tri = element_centers(landmarks, schema)
        box = BoundingBox.of_points(np.asarray(landmarks, dtype=np.float64))
        pad = crop_margin * max(box.width, box.height)
        return cls(canonical_triangle=tri, face_crop_box=box.expanded(pad, pad).squared())


def fit_canonical_alignment(centers: np.ndarray, model: AlignmentModel) -> tuple[SimilarityTransform2D, float]:
    """Fit the frame's eye/mouth centers onto the canonical triangle.

    Returns (transform, rms residual in canonical pixels).
    """
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (3, 2):
        raise GeometryError(f"expected 3x2 centers, got {centers.shape}")
    area = 0.5 * abs(np.cross(centers[1] - centers[0], centers[2] - centers[0]))
    if area <= 1e-9:
        raise GeometryError("eye/mouth centers are collinear; cannot align")
    t = fit_similarity(centers, model.canonical_triangle)
    resid = float(np.sqrt(((t.apply(centers) - model.canonical_triangle) ** 2).sum(axis=1).mean()))
    return t, resid


def expand_rom_box(tight: BoundingBox, margin: float) -> BoundingBox:
    """Grow each side by margin x max(width, height), then square the box."""
    pad = margin * max(tight.width, tight.height)
    return tight.expanded(pad, pad).squared()


def build_rom_boxes(
    aligned_landmark_frames: Sequence[np.ndarray],
    schema: Mapping[FaceElement, Sequence[int]],
    layout: PatchLayout,
    margin: float = 0.10,
) -> dict[FaceElement, BoundingBox]:
    """Per element, the squared margin-expanded bounds of all aligned landmarks."""
    if len(aligned_landmark_frames) == 0:
        raise GeometryError("need at least one aligned frame to build ROM boxes")
    if margin < 0:
        raise ConfigurationError(f"margin must be >= 0, got {margin}")
    stack = np.stack([np.asarray(f, dtype=np.float64) for f in aligned_landmark_frames])
    boxes = {}
    for el in layout.elements:
        idx = np.asarray(schema[el], dtype=np.int64)
        pts = stack[:, idx, :].reshape(-1, 2)
        boxes[el] = expand_rom_box(BoundingBox.of_points(pts), margin)
    return boxes


def fit_target_pre_transform(
    target_anchor_landmarks: np.ndarray,
    source_neutral_landmarks: np.ndarray,
    element: FaceElement,
    schema: Mapping[FaceElement, Sequence[int]],
) -> SimilarityTransform2D:
    """Per-element similarity mapping the target's anchor pose onto the source's neutral pose."""
    idx = np.asarray(schema[element], dtype=np.int64)
    if idx.size < 2:
        raise GeometryError(f"element {element!r} needs >= 2 landmarks for a similarity fit")
    src = np.asarray(target_anchor_landmarks, dtype=np.float64)[idx]
    dst = np.asarray(source_neutral_landmarks, dtype=np.float64)[idx]
    return fit_similarity(src, dst)


def adjust_target_box(
    source_box: BoundingBox,
    target_rom_landmarks: Sequence[np.ndarray],
    element: FaceElement,
    schema: Mapping[FaceElement, Sequence[int]],
    margin: float = 0.10,
) -> BoundingBox:
    """Initialize from the source box, then grow to enclose the target's ROM.

    The result is the smallest square box containing both the source box and
    the margin-expanded target ROM; if the target already fits, the source
    box is returned unchanged.
    """
    if len(target_rom_landmarks) == 0:
        return source_box
    idx = np.asarray(schema[element], dtype=np.int64)
    stack = np.stack([np.asarray(f, dtype=np.float64) for f in target_rom_landmarks])
    pts = stack[:, idx, :].reshape(-1, 2)
    target_box = expand_rom_box(BoundingBox.of_points(pts), margin)
    if source_box.contains(np.array([target_box.min, target_box.max])):
        return source_box
    return source_box.union(target_box).squared()


def extract_patch(
    frame: Frame,
    align: SimilarityTransform2D,
    pre: SimilarityTransform2D,
    box: BoundingBox,
    patch_size: int = 128,
    element: FaceElement = "face",
    origin: str = "source",
) -> tuple[Patch, bool]:
    """Warp + crop + resize one element patch from a frame.

    ``pre . align`` maps frame coordinates into the canonical space the box
    lives in; the patch resamples the box at ``patch_size`` with bilinear
    interpolation and replicated borders.  Returns the patch and an
    out-of-frame flag (True when part of the box fell outside the image and
    was filled by border replication).
    """
    to_canonical = pre.compose(align)
    from_canonical = to_canonical.inverse().matrix
    w = box.width / patch_size
    h = box.height / patch_size
    # patch pixel centers -> canonical coords (area-based box convention)
    box_map = np.array(
        [[w, 0.0, box.min[0] + 0.5 * w - 0.5], [0.0, h, box.min[1] + 0.5 * h - 0.5]], dtype=np.float64
    )
    m = np.empty((2, 3), dtype=np.float64)
    m[:, :2] = from_canonical[:, :2] @ box_map[:, :2]
    m[:, 2] = from_canonical[:, :2] @ box_map[:, 2] + from_canonical[:, 2]
    pixels = warp_affine(frame.image, m, (patch_size, patch_size))

    corners = np.array(
        [[0.0, 0.0], [patch_size - 1.0, 0.0], [0.0, patch_size - 1.0], [patch_size - 1.0, patch_size - 1.0]]
    )
    src = corners @ m[:, :2].T + m[:, 2]
    iw, ih = frame.size
    out_of_frame = bool(
        (src[:, 0] < 0).any() or (src[:, 0] > iw - 1).any() or (src[:, 1] < 0).any() or (src[:, 1] > ih - 1).any()
    )
    return Patch(pixels=pixels, element=element, origin=origin), out_of_frame


# --- extractor state --------------------------------------------------------------

IDENTITY = SimilarityTransform2D.identity()


@dataclass(frozen=True)
class ElementExtractor:
    """Everything needed to cut one element's patch out of a frame."""

    element: FaceElement
    target_pre_transform: SimilarityTransform2D
    source_box: BoundingBox
    target_box: BoundingBox
    margin: float


class PatchExtractor:
    """Fitted patch-extraction state for one source/target pair.

    Built once from the training data; inference reuses the exact same
    geometry via the persisted JSON state.
    """

    def __init__(
        self,
        layout: PatchLayout,
        schema: Mapping[FaceElement, Sequence[int]],
        model: AlignmentModel,
        extractors: Mapping[FaceElement, ElementExtractor],
        patch_size: int = 128,
        margin: float = 0.10,
    ):
        self.layout = layout
        self.schema = {k: np.asarray(v, dtype=np.int64) for k, v in schema.items()}
        self.model = model
        self.extractors = dict(extractors)
        self.patch_size = int(patch_size)
        self.margin = float(margin)

    @property
    def fingerprint(self) -> str:
        return layout_fingerprint(self.layout, self.patch_size, {k: v.tolist() for k, v in self.schema.items()})

    # -- fitting --------------------------------------------------------------

    @classmethod
    def fit(
        cls,
        source_frames: Sequence[Frame],
        target_frames: Sequence[Frame],
        layout: PatchLayout,
        schema: Mapping[FaceElement, Sequence[int]],
        patch_size: int = 128,
        margin: float = 0.10,
        detector=None,
    ) -> "PatchExtractor":
        """Fit alignment, ROM boxes, and target pre-transforms from training data.

        The first source frame must show a neutral expression (it anchors the
        canonical space); the first target frame must be the anchor frame
        (all rig parameters zero).
        """
        detector = detector or GroundTruthDetector()
        k = detector(source_frames[0]).shape[0]
        schema = validate_layout(layout, schema, n_landmarks=k)

        neutral_lm = detector(source_frames[0])
        model = AlignmentModel.from_neutral_frame(neutral_lm, schema)

        aligned = []
        for fr in source_frames:
            lm = detector(fr)
            t, _ = fit_canonical_alignment(element_centers(lm, schema), model)
            aligned.append(t.apply(lm))
        source_boxes = build_rom_boxes(aligned, schema, layout, margin=margin)

        source_neutral_aligned = aligned[0]
        anchor_lm = detector(target_frames[0])
        extractors = {}
        for el in layout.elements:
            pre = fit_target_pre_transform(anchor_lm, source_neutral_aligned, el, schema)
            target_aligned = [pre.apply(detector(fr)) for fr in target_frames]
            tbox = adjust_target_box(source_boxes[el], target_aligned, el, schema, margin=margin)
            extractors[el] = ElementExtractor(
                element=el,
                target_pre_transform=pre,
                source_box=source_boxes[el],
                target_box=tbox,
                margin=margin,
            )
        return cls(layout, schema, model, extractors, patch_size=patch_size, margin=margin)

    # -- extraction -------------------------------------------------------------

    def source_alignment(self, frame: Frame, detector=None) -> tuple[SimilarityTransform2D, float]:
        detector = detector or GroundTruthDetector()
        return fit_canonical_alignment(element_centers(detector(frame), self.schema), self.model)

    def extract_source(
        self, frame: Frame, detector=None
    ) -> tuple[dict[FaceElement, Patch], dict]:
        """Patches for all layout elements of one source frame, plus diagnostics."""
        align, resid = self.source_alignment(frame, detector)
        patches = {}
        flags = {}
        for el in self.layout.elements:
            ex = self.extractors[el]
            patch, oof = extract_patch(
                frame, align, IDENTITY, ex.source_box, self.patch_size, element=el, origin="source"
            )
            patches[el] = patch
            flags[el] = oof
        return patches, {"alignment_residual": resid, "out_of_frame": flags}

    def extract_target(self, frame: Frame) -> dict[FaceElement, Patch]:
        """Patches for all layout elements of one target frame (fixed pre-transforms)."""
        patches = {}
        for el in self.layout.elements:
            ex = self.extractors[el]
            patch, _ = extract_patch(
                frame, IDENTITY, ex.target_pre_transform, ex.target_box, self.patch_size, element=el, origin="target"
            )
            patches[el] = patch
        return patches

    # -- persistence --------------------------------------------------------------

    def to_dict(self) -> dict:
        def tf(t: SimilarityTransform2D):
            return {"rotation": t.rotation, "scale": t.scale, "translation": list(t.translation)}

        def bx(b: BoundingBox):
            return {"min": list(b.min), "max": list(b.max)}

        return {
            "layout": list(self.layout.elements),
            "patch_size": self.patch_size,
            "margin": self.margin,
            "schema": {k: v.tolist() for k, v in self.schema.items()},
            "canonical_triangle": self.model.canonical_triangle.tolist(),
            "face_crop_box": bx(self.model.face_crop_box),
            "elements": {
                el: {
                    "target_pre_transform": tf(ex.target_pre_transform),
                    "source_box": bx(ex.source_box),
                    "target_box": bx(ex.target_box),
                    "margin": ex.margin,
                }
                for el, ex in self.extractors.items()
            },
            "fingerprint": self.fingerprint,
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_dict(cls, doc: dict) -> "PatchExtractor":
        def tf(d) -> SimilarityTransform2D:
            return SimilarityTransform2D(
                rotation=d["rotation"], scale=d["scale"], translation=tuple(d["translation"])
            )

        def bx(d) -> BoundingBox:
            return BoundingBox(min=tuple(d["min"]), max=tuple(d["max"]))

        layout = PatchLayout(tuple(doc["layout"]))
        model = AlignmentModel(
            canonical_triangle=np.asarray(doc["canonical_triangle"], dtype=np.float64),
            face_crop_box=bx(doc["face_crop_box"]),
        )
        extractors = {
            el: ElementExtractor(
                element=el,
                target_pre_transform=tf(entry["target_pre_transform"]),
                source_box=bx(entry["source_box"]),
                target_box=bx(entry["target_box"]),
                margin=entry["margin"],
            )
            for el, entry in doc["elements"].items()
        }
        return cls(
            layout,
            {k: np.asarray(v, dtype=np.int64) for k, v in doc["schema"].items()},
            model,
            extractors,
            patch_size=doc["patch_size"],
            margin=doc["margin"],
        )

    @classmethod
    def load(cls, path: Path) -> "PatchExtractor":
        p = Path(path)
        if not p.exists():
            raise DataLoadError(f"missing extractor state: {p}")
        return cls.from_dict(json.loads(p.read_text()))
