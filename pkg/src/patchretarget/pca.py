"""PCA blendshape decomposition of vertex animations.

A character's animation matrix (frames x stacked vertex coordinates) is
decomposed into a mean pose plus an orthonormal basis whose weights act as
the animation parameters.  The component count is the minimum of a hard cap
(default 20, so the weight vector length is stable across characters) and
the smallest dimension reaching the cumulative variance target (default
99.9%).
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .exceptions import DataLoadError, DataValidationError
from .types import BlendshapeBasis

_DEGENERATE_VAR = 1e-24


def decompose(
    vertex_frames: np.ndarray,
    max_components: int = 20,
    variance_target: float = 0.999,
) -> tuple[BlendshapeBasis, np.ndarray]:
    """Decompose an F x M vertex animation; returns (basis, F x D weights).

    Basis vector signs are fixed so each row's largest-magnitude entry is
    positive, making weights reproducible across platforms.  A constant
    animation degenerates to a single zero-variance component with zero
    weights so downstream shapes never collapse.
    """
    x = np.asarray(vertex_frames, dtype=np.float64)
    if x.ndim != 2:
        raise DataValidationError(f"vertex_frames must be 2-D (frames x coords), got {x.shape}")
    f, m = x.shape
    if f < 2:
        raise DataValidationError(f"need at least 2 frames to decompose, got {f}")
    if not np.isfinite(x).all():
        raise DataValidationError("vertex_frames contains NaN/inf entries")

    mean = x.mean(axis=0)
    xc = x - mean
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    total = float((s**2).sum())
    if total <= _DEGENERATE_VAR:
        basis = np.zeros((1, m))
        basis[0, 0] = 1.0  # arbitrary unit direction keeps the basis orthonormal
        return (
            BlendshapeBasis(mean=mean, basis=basis, explained_variance_ratio=np.zeros(1), truncation_rmse=0.0),
            np.zeros((f, 1)),
        )

    ratios = s**2 / total
    cum = np.cumsum(ratios)
    d_var = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
    rank = int((s > s[0] * 1e-12).sum())
    if d_var > rank:
        warnings.warn(
            f"variance target {variance_target} unreachable with numerical rank {rank}; "
            f"retaining {rank} components",
            stacklevel=2,
        )
        d_var = rank
    d = max(1, min(int(max_components), d_var, f - 1, m))

    basis = vt[:d].copy()
    weights = xc @ basis.T
    flip = basis[np.arange(d), np.abs(basis).argmax(axis=1)] < 0
    basis[flip] *= -1.0
    weights[:, flip] *= -1.0

    resid = float((s[d:] ** 2).sum())
    truncation_rmse = float(np.sqrt(resid / (f * m)))
    return (
        BlendshapeBasis(
            mean=mean,
            basis=basis,
            explained_variance_ratio=ratios[:d],
            truncation_rmse=truncation_rmse,
        ),
        weights,
    )


def reconstruct(basis: BlendshapeBasis, weights: np.ndarray) -> np.ndarray:
    """mean + weights @ basis, for one weight vector or a stack of them."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[-1] != basis.n_components:
        raise DataValidationError(
            f"weight dimension {w.shape[-1]} does not match basis D={basis.n_components}"
        )
    return basis.mean + w @ basis.basis


def vertex_mae(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute error over frames and coordinates, in model units."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataValidationError(f"vertex sequences differ in shape: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


BASIS_FILE = "basis.csv"
MEAN_FILE = "mean.csv"
VARIANCE_FILE = "variance.csv"
BASIS_META_FILE = "basis_meta.json"


def save_basis(root: Path, basis: BlendshapeBasis) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    np.savetxt(root / BASIS_FILE, basis.basis, delimiter=",", fmt="%.17g")
    np.savetxt(root / MEAN_FILE, basis.mean[None, :], delimiter=",", fmt="%.17g")
    np.savetxt(root / VARIANCE_FILE, basis.explained_variance_ratio[None, :], delimiter=",", fmt="%.17g")
    (root / BASIS_META_FILE).write_text(
        json.dumps({"truncation_rmse": basis.truncation_rmse, "n_components": basis.n_components})
    )


def load_basis(root: Path) -> BlendshapeBasis:
    root = Path(root)
    for name in (BASIS_FILE, MEAN_FILE, VARIANCE_FILE):
        if not (root / name).exists():
            raise DataLoadError(f"missing basis file: {root / name}")
    basis = np.atleast_2d(np.loadtxt(root / BASIS_FILE, delimiter=","))
    mean = np.loadtxt(root / MEAN_FILE, delimiter=",").ravel()
    variance = np.atleast_1d(np.loadtxt(root / VARIANCE_FILE, delimiter=",")).ravel()
    meta_path = root / BASIS_META_FILE
    rmse = 0.0
    if meta_path.exists():
        rmse = float(json.loads(meta_path.read_text()).get("truncation_rmse", 0.0))
    return BlendshapeBasis(mean=mean, basis=basis, explained_variance_ratio=variance, truncation_rmse=rmse)
