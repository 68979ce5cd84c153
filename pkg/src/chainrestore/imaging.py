"""Image arrays, 8-bit PNG I/O, random crops and the PSNR/SSIM metrics.

Images are plain ``float64`` arrays of shape ``(H, W, C)`` with ``C`` in
{1, 3}, linear intensity with nominal range [0, 1].  Nothing in the pipeline
clips; clamping happens only when an image is exported or measured.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

INF = math.inf

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def as_image(data) -> np.ndarray:
    """Validate and normalise ``data`` to a float64 ``(H, W, C)`` array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected an (H, W, 1|3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    return arr


def clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def quantize(img: np.ndarray) -> np.ndarray:
    """What an image looks like after a save/load round trip."""
    return to_uint8(img).astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    # round half up, not numpy's banker's rounding
    return np.floor(clamp(img) * 255.0 + 0.5).astype(np.uint8)


def to_gray(img: np.ndarray) -> np.ndarray:
    img = as_image(img)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ LUMA_WEIGHTS


def fingerprint(img: np.ndarray) -> str:
    """Short content hash used to tag intermediate images in traces."""
    arr = np.ascontiguousarray(img, dtype=np.float64)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()[:16]


def _check_pair(a, b):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0.

    Both inputs are clamped to [0, 1] first.  MSE is pooled over every
    channel.  Returns ``INF`` when the clamped images are identical.
    """
    a, b = _check_pair(a, b)
    mse = float(np.mean((clamp(a) - clamp(b)) ** 2))
    if mse == 0.0:
        return INF
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_taps(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """1-D taps of the separable SSIM window."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


_TAPS = _gaussian_taps()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity on the luma channel.

    Standard settings: 11x11 Gaussian window with sigma 1.5, K1=0.01,
    K2=0.03, dynamic range 1.0, statistics over fully-contained windows
    only.  Images smaller than the window get a single global window.
    """
    a, b = _check_pair(a, b)
    x = to_gray(clamp(a))
    y = to_gray(clamp(b))
    if np.array_equal(x, y):
        return 1.0
    c1 = 0.01**2
    c2 = 0.03**2
    size = _TAPS.size
    if x.shape[0] < size or x.shape[1] < size:
        mu_x, mu_y = x.mean(), y.mean()
        sxx = ((x - mu_x) ** 2).mean()
        syy = ((y - mu_y) ** 2).mean()
        sxy = ((x - mu_x) * (y - mu_y)).mean()
    else:
        half = size // 2

        def filt(z):
            # the Gaussian window is separable: filter rows, then columns
            out = ndimage.correlate1d(z, _TAPS, axis=0, mode="constant")
            out = ndimage.correlate1d(out, _TAPS, axis=1, mode="constant")
            return out[half : z.shape[0] - half, half : z.shape[1] - half]

        mu_x, mu_y = filt(x), filt(y)
        sxx = filt(x * x) - mu_x * mu_x
        syy = filt(y * y) - mu_y * mu_y
        sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def random_crop(img: np.ndarray, size: int, rng=None) -> np.ndarray:
    """Crop a ``size`` x ``size`` window at a uniformly random offset.

    If the image is smaller than ``size`` in either dimension the whole image
    is returned unchanged.  ``rng`` may be a seed or a ``numpy`` Generator.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    if h < size or w < size:
        return img
    rng = _as_rng(rng)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top : top + size, left : left + size]


def load_png(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG as a float image in [0, 1]."""
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            fmt, mode = im.format, im.mode
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if fmt != "PNG":
        raise ValueError(f"{path} is not a PNG (format {fmt})")
    if mode not in ("L", "RGB"):
        raise ValueError(f"{path}: unsupported PNG mode {mode!r}; need 8-bit L or RGB")
    return as_image(arr.astype(np.float64) / 255.0)


def save_png(img: np.ndarray, path) -> None:
    """Write ``img`` as an 8-bit PNG (clamped, round half up)."""
    img = as_image(img)
    levels = to_uint8(img)
    pil = PILImage.fromarray(levels[:, :, 0] if levels.shape[2] == 1 else levels)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")
