"""Dataset directory layout and loaders.

A dataset root contains::

    frames/000000.png ...   8-bit RGB frames, zero-padded 6-digit index
    landmarks.json          {"frames": [[[x, y], ...], ...]}
    weights.csv             one row per frame, D columns (targets only)
    manifest.json           generator metadata (script hash, seed, ...), optional
    schema.json             element -> landmark index lists, optional

Weights CSV rows align with frame indices.  The CSV has no header by
default; an optional header row of non-numeric names is detected and
skipped on load.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .exceptions import DataLoadError, DataValidationError
from .types import Frame

FRAME_DIR = "frames"
LANDMARKS_FILE = "landmarks.json"
WEIGHTS_FILE = "weights.csv"
MANIFEST_FILE = "manifest.json"
SCHEMA_FILE = "schema.json"


def frame_filename(index: int) -> str:
    return f"{index:06d}.png"


def save_landmarks(path: Path, landmarks: Sequence[np.ndarray]) -> None:
    doc = {"frames": [np.asarray(lm, dtype=np.float64).tolist() for lm in landmarks]}
    path.write_text(json.dumps(doc))


def load_landmarks(path: Path) -> list[np.ndarray]:
    if not path.exists():
        raise DataLoadError(f"missing landmark file: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataLoadError(f"unparseable landmark file {path}: {e}") from e
    if not isinstance(doc, dict) or "frames" not in doc or not isinstance(doc["frames"], list):
        raise DataValidationError(f'{path}: expected a JSON object with a "frames" list')
    out = []
    for i, entry in enumerate(doc["frames"]):
        lm = np.asarray(entry, dtype=np.float64)
        if lm.ndim != 2 or lm.shape[1] != 2:
            raise DataValidationError(f"{path}: frame {i} landmarks must be Kx2, got {lm.shape}")
        out.append(lm)
    return out


def save_weights_csv(path: Path, weights: np.ndarray, header: bool = False) -> None:
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow([f"pc{j:02d}" for j in range(w.shape[1])])
        for row in w:
            writer.writerow([repr(float(v)) for v in row])


def load_weights_csv(path: Path) -> np.ndarray:
    if not path.exists():
        raise DataLoadError(f"missing weights file: {path}")
    rows = []
    with path.open(newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if i == 0:
                try:
                    float(row[0])
                except ValueError:
                    continue  # header row
            try:
                rows.append([float(v) for v in row])
            except ValueError as e:
                raise DataValidationError(f"{path}: non-numeric value in row {i}: {e}") from e
    if not rows:
        return np.zeros((0, 0), dtype=np.float64)
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataValidationError(f"{path}: inconsistent column counts {sorted(widths)}")
    return np.asarray(rows, dtype=np.float64)


def save_manifest(root: Path, manifest: dict) -> None:
    (root / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_manifest(root: Path) -> Optional[dict]:
    p = Path(root) / MANIFEST_FILE
    if not p.exists():
        return None
    return json.loads(p.read_text())


def save_schema(root: Path, schema: dict) -> None:
    doc = {k: [int(i) for i in v] for k, v in schema.items()}
    (Path(root) / SCHEMA_FILE).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_schema(root: Path) -> dict[str, list[int]]:
    p = Path(root) / SCHEMA_FILE
    if not p.exists():
        raise DataLoadError(f"missing schema file: {p}")
    return {k: [int(i) for i in v] for k, v in json.loads(p.read_text()).items()}


def save_dataset(
    root: Path,
    images: Sequence[np.ndarray],
    landmarks: Sequence[np.ndarray],
    weights: Optional[np.ndarray] = None,
    manifest: Optional[dict] = None,
    schema: Optional[dict] = None,
) -> None:
    """Write a dataset directory. ``weights`` present marks it as target-role data."""
    root = Path(root)
    (root / FRAME_DIR).mkdir(parents=True, exist_ok=True)
    if len(images) != len(landmarks):
        raise DataValidationError(f"{len(images)} images vs {len(landmarks)} landmark sets")
    for i, img in enumerate(images):
        arr = np.asarray(img)
        if arr.dtype != np.uint8:
            raise DataValidationError("frames are stored as 8-bit RGB; convert before saving")
        Image.fromarray(arr, mode="RGB").save(root / FRAME_DIR / frame_filename(i))
    save_landmarks(root / LANDMARKS_FILE, landmarks)
    if weights is not None:
        w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        if w.shape[0] != len(images):
            raise DataValidationError(f"{w.shape[0]} weight rows vs {len(images)} frames")
        save_weights_csv(root / WEIGHTS_FILE, w)
    if manifest is not None:
        save_manifest(root, manifest)
    if schema is not None:
        save_schema(root, schema)


def load_dataset(root: Path, role: str) -> list[Frame]:
    """Load a dataset directory as a frame sequence sorted by index.

    ``role`` is "source" or "target"; target frames carry per-frame weight
    vectors, source directories must not contain a weights file.
    """
    root = Path(root)
    if role not in ("source", "target"):
        raise DataValidationError(f'role must be "source" or "target", got {role!r}')
    frame_dir = root / FRAME_DIR
    if not frame_dir.is_dir():
        raise DataLoadError(f"missing frame directory: {frame_dir}")
    paths = sorted(frame_dir.glob("*.png"))
    if not paths:
        raise DataLoadError(f"no frames found under {frame_dir}")
    landmarks = load_landmarks(root / LANDMARKS_FILE)
    if len(landmarks) != len(paths):
        raise DataValidationError(
            f"{root}: {len(paths)} frames but {len(landmarks)} landmark sets"
        )
    k = landmarks[0].shape[0]
    for i, lm in enumerate(landmarks):
        if lm.shape[0] != k:
            raise DataValidationError(
                f"{root}: landmark count mismatch at frame {i}: {lm.shape[0]} != {k}"
            )

    weights = None
    weights_path = root / WEIGHTS_FILE
    if role == "source":
        if weights_path.exists():
            raise DataValidationError(
                f"{root}: role=source but a weights file is present ({weights_path})"
            )
    else:
        weights = load_weights_csv(weights_path)
        if weights.shape[0] != len(paths):
            raise DataValidationError(
                f"{root}: {weights.shape[0]} weight rows but {len(paths)} frames"
            )

    frames = []
    for i, p in enumerate(paths):
        idx = int(p.stem)
        img = np.asarray(Image.open(p).convert("RGB"))
        frames.append(
            Frame(
                image=img,
                landmarks=landmarks[idx],
                index=idx,
                weights=None if weights is None else weights[idx],
            )
        )
    frames.sort(key=lambda f: f.index)
    return frames
