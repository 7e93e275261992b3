"""Image resampling, structural similarity, and training-time augmentation.

Everything here is plain numpy so the geometry and metrics stay exactly
reproducible across platforms; the reenactment module keeps a torch twin of
the SSIM for use as a differentiable loss (tested for equivalence).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DataValidationError


def to_float(img: np.ndarray) -> np.ndarray:
    """uint8 image -> float32 in [0, 1]. Float input is validated and passed through."""
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0
    out = np.asarray(img, dtype=np.float32)
    if out.size and (out.min() < -1e-6 or out.max() > 1 + 1e-6):
        raise DataValidationError("float image expected in [0, 1]")
    return out


def to_uint8(img: np.ndarray) -> np.ndarray:
    """float [0, 1] image -> uint8 with round-half-away rounding."""
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def warp_affine(image: np.ndarray, dst_to_src: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear affine warp with replicated borders.

    ``dst_to_src`` is a 2x3 matrix mapping output pixel centers (x, y) to
    source sampling coordinates. Output is float32 with the input's channel
    count and shape ``out_shape = (height, width)``.
    """
    img = to_float(image)
    h, w = img.shape[:2]
    oh, ow = out_shape
    m = np.asarray(dst_to_src, dtype=np.float64)
    ys, xs = np.mgrid[0:oh, 0:ow]
    sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    # replicate border: clamp sampling coordinates into the valid lattice
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0).astype(np.float32)[..., None]
    fy = (sy - y0).astype(np.float32)[..., None]
    p00 = img[y0, x0]
    p01 = img[y0, x1]
    p10 = img[y1, x0]
    p11 = img[y1, x1]
    top = p00 * (1 - fx) + p01 * fx
    bot = p10 * (1 - fx) + p11 * fx
    return top * (1 - fy) + bot * fy


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2-D gaussian kernel used by the structural similarity index."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity between two images in [0, 1].

    Gaussian-weighted local statistics over ``window`` x ``window``
    neighborhoods fully inside the image, constants C1=(0.01)^2,
    C2=(0.03)^2 for unit dynamic range, averaged over positions and
    channels.
    """
    a = to_float(a).astype(np.float64)
    b = to_float(b).astype(np.float64)
    if a.shape != b.shape:
        raise DataValidationError(f"ssim needs equal shapes, got {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if min(a.shape[0], a.shape[1]) < window:
        raise DataValidationError(f"image side smaller than ssim window {window}")
    kern = gaussian_window(window, sigma)
    c1, c2 = 0.01**2, 0.03**2

    def filt(x):
        win = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(0, 1))
        return np.einsum("ijcuv,uv->ijc", win, kern)

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


# --- color jitter ------------------------------------------------------------

def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(img * factor, 0.0, 1.0)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    gray_mean = _grayscale(img).mean()
    return np.clip(gray_mean + factor * (img - gray_mean), 0.0, 1.0)


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    gray = _grayscale(img)[..., None]
    return np.clip(gray + factor * (img - gray), 0.0, 1.0)


def adjust_hue(img: np.ndarray, shift: float) -> np.ndarray:
    """Rotate hue by ``shift`` (fraction of the full color circle)."""
    hsv = _rgb_to_hsv(img)
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)


def _grayscale(img: np.ndarray) -> np.ndarray:
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def _rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = img.max(axis=-1)
    minc = img.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rc = (maxc - r) / np.maximum(delta, 1e-12)
        gc = (maxc - g) / np.maximum(delta, 1e-12)
        bc = (maxc - b) / np.maximum(delta, 1e-12)
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    out = np.empty(hsv.shape, dtype=hsv.dtype)
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    for k in range(6):
        m = i == k
        out[..., 0][m] = choices_r[k][m]
        out[..., 1][m] = choices_g[k][m]
        out[..., 2][m] = choices_b[k][m]
    return out


# --- augmentation ------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges for training-time patch augmentation.

    Color factors are multiplicative and drawn uniformly from
    ``(color_low, color_high)``; hue shifts are drawn from
    ``(-hue_range, +hue_range)``.  Geometry is a random affine whose rotation
    and per-axis translation magnitudes are drawn from ``(0, max)`` with a
    random sign, and whose scale is drawn from ``1 +- scale_range``.
    """

    color_low: float = 0.5
    color_high: float = 2.0
    hue_range: float = 0.2
    rotation_max_deg: float = 10.0
    translation_max: float = 0.05
    scale_range: float = 0.05
    color: bool = True
    geometry: bool = True

    def disabled(self) -> "AugmentConfig":
        return replace(self, color=False, geometry=False)

    def without_color(self) -> "AugmentConfig":
        return replace(self, color=False)


@dataclass(frozen=True)
class AugmentParams:
    brightness: float = 1.0
    saturation: float = 1.0
    contrast: float = 1.0
    hue: float = 0.0
    rotation_deg: float = 0.0
    translate: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0


def sample_augment_params(config: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    bright = sat = contr = 1.0
    hue = 0.0
    rot = 0.0
    trans = (0.0, 0.0)
    scale = 1.0
    if config.color:
        bright = float(rng.uniform(config.color_low, config.color_high))
        sat = float(rng.uniform(config.color_low, config.color_high))
        contr = float(rng.uniform(config.color_low, config.color_high))
        hue = float(rng.uniform(-config.hue_range, config.hue_range))
    if config.geometry:
        rot = float(rng.uniform(0.0, config.rotation_max_deg) * rng.choice((-1.0, 1.0)))
        trans = (
            float(rng.uniform(0.0, config.translation_max) * rng.choice((-1.0, 1.0))),
            float(rng.uniform(0.0, config.translation_max) * rng.choice((-1.0, 1.0))),
        )
        scale = float(rng.uniform(1.0 - config.scale_range, 1.0 + config.scale_range))
    return AugmentParams(
        brightness=bright, saturation=sat, contrast=contr, hue=hue,
        rotation_deg=rot, translate=trans, scale=scale,
    )


def apply_augment(pixels: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply jitter + affine to a float [0, 1] patch. Identity params return the input bit-exactly."""
    out = np.asarray(pixels, dtype=np.float32)
    if params.brightness != 1.0:
        out = adjust_brightness(out, params.brightness)
    if params.contrast != 1.0:
        out = adjust_contrast(out, params.contrast)
    if params.saturation != 1.0:
        out = adjust_saturation(out, params.saturation)
    if params.hue != 0.0:
        out = adjust_hue(out, params.hue)
    if params.rotation_deg != 0.0 or params.translate != (0.0, 0.0) or params.scale != 1.0:
        side = out.shape[0]
        c = (side - 1) / 2.0
        ang = np.deg2rad(params.rotation_deg)
        s = params.scale
        # dst -> src: invert the (rotate, scale about center) + translate map
        cos_a, sin_a = np.cos(ang), np.sin(ang)
        fwd = np.array([[s * cos_a, -s * sin_a], [s * sin_a, s * cos_a]])
        inv = np.linalg.inv(fwd)
        tx = params.translate[0] * side
        ty = params.translate[1] * side
        m = np.zeros((2, 3))
        m[:, :2] = inv
        m[:, 2] = np.array([c, c]) - inv @ np.array([c + tx, c + ty])
        out = warp_affine(out, m, (side, side))
    return np.clip(out, 0.0, 1.0) if out is not pixels else out


def augment(pixels: np.ndarray, config: AugmentConfig, rng: np.random.Generator | int) -> np.ndarray:
    """Randomized jitter + affine for one float [0, 1] patch; deterministic per rng state."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    return apply_augment(pixels, sample_augment_params(config, rng))
