"""Per-basis restoration operators.

Two families sit behind :class:`RestorerRegistry`:

* oracle restorers invert a recorded synthesis component exactly, which
  makes the restoration loop verifiable and degradation coupling measurable;
* classical restorers are blind signal-processing baselines (median +
  bilateral denoising, dark-channel dehazing, oriented-median deraining,
  percentile-matched gamma inversion) used for end-to-end experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .algebra import BasisSet, Label, as_label
from .imaging import INF, as_image, psnr, to_gray
from .synthesis import NOISE_SIGMA, SynthesisRecord, apply_components, invert_component

EXACT_TOL = 1e-9


class UnknownBasisError(KeyError):
    pass


# ---------------------------------------------------------------------------
# oracle inversion
# ---------------------------------------------------------------------------


def _positions(record: SynthesisRecord, basis: Label) -> list[int]:
    """Indices in ``record.applied`` covering ``basis`` (latest match first)."""
    taken: list[int] = []
    for symbol in basis.parts:
        idx = [i for i, c in enumerate(record.applied) if c.symbol == symbol and i not in taken]
        if not idx:
            raise ValueError(f"{basis} is not among the remaining components {record.label}")
        taken.append(idx[-1])
    return sorted(taken, reverse=True)


def oracle_remove(img, basis, record: SynthesisRecord) -> tuple[np.ndarray, SynthesisRecord]:
    """Invert the components of ``basis`` and drop them from the record.

    Multi-part bases are inverted latest-applied first within a single call.
    The result is exact only when the removed components are the outermost
    remaining ones; otherwise the later components are distorted (coupling).
    """
    basis = as_label(basis)
    out = as_image(img)
    pos = _positions(record, basis)
    for i in pos:
        out = invert_component(out, record.applied[i])
    remaining = [c for i, c in enumerate(record.applied) if i not in pos]
    return out, SynthesisRecord(record.clean_ref, remaining)


def present_part(record: SynthesisRecord, basis) -> Label | None:
    """The sub-multiset of ``basis`` still listed in ``record`` (None if empty)."""
    left = list(c.symbol for c in record.applied)
    kept = []
    for symbol in as_label(basis).parts:
        if symbol in left:
            left.remove(symbol)
            kept.append(symbol)
    return Label(tuple(kept)) if kept else None


def coupling_gap(clean, record: SynthesisRecord, after_removal, remaining) -> float:
    """PSNR between an intermediate image and the ideal one.

    The ideal image re-synthesizes ``clean`` with only the components still
    listed in ``record`` (same parameters and seeds).  Returns ``INF`` when
    the two agree to within 1e-9 everywhere, i.e. no coupling.
    """
    expected = record.label
    if remaining is None or expected is None:
        if not (remaining is None and expected is None):
            raise ValueError(f"remaining label {remaining} does not match record {expected}")
    elif as_label(remaining) != expected:
        raise ValueError(f"remaining label {remaining} does not match record {expected}")
    ideal = apply_components(clean, record.applied)
    after_removal = as_image(after_removal)
    if np.max(np.abs(after_removal - ideal)) <= EXACT_TOL:
        return INF
    return psnr(after_removal, ideal)


# ---------------------------------------------------------------------------
# classical restorers
# ---------------------------------------------------------------------------


@dataclass
class ClassicalParams:
    median_size: int = 3
    bilateral_radius: int = 3
    bilateral_spatial: float = 1.5
    bilateral_range_scale: float = 2.0
    dcp_patch: int = 15
    dcp_omega: float = 0.95
    dcp_t_floor: float = 0.1
    dcp_top_fraction: float = 0.001
    haze_gate: tuple[float, float] = (0.12, 0.20)
    guided_radius: int = 20
    guided_eps: float = 1e-3
    derain_length: int = 7
    derain_bins: int = 36
    low_ref_percentiles: tuple[float, float] = (1.0, 99.0)
    low_ref_levels: tuple[float, float] = (0.09, 0.90)
    snow_size: int = 7
    snow_threshold: float = 0.15


def _per_channel(fn, img):
    return np.stack([fn(img[:, :, c]) for c in range(img.shape[2])], axis=2)


def estimate_noise_sigma(img) -> float:
    """Immerkaer's fast noise estimate on the luma channel."""
    g = to_gray(img)
    h, w = g.shape
    kernel = np.array([[1, -2, 1], [-2, 4, -2], [1, -2, 1]], dtype=float)
    resp = ndimage.convolve(g, kernel)[1:-1, 1:-1]
    return float(math.sqrt(math.pi / 2) * np.abs(resp).sum() / (6 * (w - 2) * (h - 2)))


def bilateral(img, sigma_range: float, radius: int = 3, sigma_spatial: float = 1.5):
    """Joint-colour bilateral filter with a square window."""
    img = as_image(img)
    pad = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="reflect")
    h, w, c = img.shape
    acc = np.zeros_like(img)
    norm = np.zeros((h, w))
    scale = -1.0 / (2 * sigma_range**2 * c)
    diff = np.empty_like(img)
    wt = np.empty((h, w))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ws = math.exp(-(dy * dy + dx * dx) / (2 * sigma_spatial**2))
            shifted = pad[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            np.subtract(shifted, img, out=diff)
            np.einsum("ijk,ijk->ij", diff, diff, out=wt)
            wt *= scale
            np.exp(wt, out=wt)
            wt *= ws
            acc += wt[:, :, None] * shifted
            norm += wt
    return acc / norm[:, :, None]


def denoise(img, sigma: float | None = None, params: ClassicalParams | None = None):
    """3x3 median followed by a bilateral filter whose range kernel scales
    with the noise level (given on the 0..255 scale, estimated if None)."""
    p = params or ClassicalParams()
    img = as_image(img)
    s = sigma / 255.0 if sigma is not None else estimate_noise_sigma(img)
    med = _per_channel(lambda ch: ndimage.median_filter(ch, size=p.median_size, mode="reflect"), img)
    if s <= 0:
        return med
    return bilateral(med, p.bilateral_range_scale * s, p.bilateral_radius, p.bilateral_spatial)


def dark_channel(img, patch: int = 15) -> np.ndarray:
    img = as_image(img)
    return ndimage.minimum_filter(img.min(axis=2), size=patch, mode="nearest")


def _box(x, r):
    return ndimage.uniform_filter(x, size=2 * r + 1, mode="reflect")


def guided_filter(guide, src, radius: int, eps: float) -> np.ndarray:
    mean_i, mean_p = _box(guide, radius), _box(src, radius)
    cov = _box(guide * src, radius) - mean_i * mean_p
    var = _box(guide * guide, radius) - mean_i * mean_i
    a = cov / (var + eps)
    b = mean_p - a * mean_i
    return _box(a, radius) * guide + _box(b, radius)


def estimate_airlight(img, dark: np.ndarray, fraction: float = 0.001) -> float:
    """Grey airlight: mean intensity of the pixels with the brightest dark channel."""
    flat = img.reshape(-1, img.shape[2])
    n = max(int(round(dark.size * fraction)), 1)
    idx = np.argsort(dark.ravel(), kind="stable")[-n:]
    return float(flat[idx].mean())


def haze_evidence(img, airlight: float, patch: int = 15) -> float:
    """5th percentile of the locally averaged channel minimum, relative to
    the airlight.  Haze lifts every region towards the airlight, while clean
    scenes keep some dark areas; averaging instead of min-filtering keeps
    residual noise from hiding the haze."""
    local = ndimage.uniform_filter(img.min(axis=2), size=patch, mode="reflect")
    return float(np.percentile(local, 5) / airlight)


def dehaze(img, params: ClassicalParams | None = None):
    """Dark-channel-prior dehazing with guided-filter transmission refinement.

    The strength omega ramps from 0 to ``dcp_omega`` as the haze evidence
    crosses ``haze_gate``, so haze-free input passes through unchanged.
    """
    p = params or ClassicalParams()
    img = as_image(img)
    work = np.clip(img, 0.0, None)
    dark = dark_channel(work, p.dcp_patch)
    airlight = max(estimate_airlight(work, dark, p.dcp_top_fraction), 1e-3)
    lo, hi = p.haze_gate
    omega = p.dcp_omega * float(np.clip((haze_evidence(work, airlight, p.dcp_patch) - lo) / (hi - lo), 0, 1))
    if omega == 0:
        return img.copy()
    t = 1.0 - omega * dark_channel(work / airlight, p.dcp_patch)
    t = guided_filter(to_gray(np.clip(img, 0, 1)), t, p.guided_radius, p.guided_eps)
    t = np.maximum(t, p.dcp_t_floor)[:, :, None]
    return (img - airlight) / t + airlight


def streak_angle(img, bins: int = 36) -> float:
    """Dominant streak direction in degrees (90 = vertical).

    Histogram of gradient orientations of the high-pass image, weighted by
    squared magnitude; streaks run perpendicular to the dominant gradient.
    """
    g = to_gray(img)
    hp = g - ndimage.median_filter(g, size=5, mode="reflect")
    gy = ndimage.sobel(hp, axis=0)
    gx = ndimage.sobel(hp, axis=1)
    # image rows grow downwards; flip gy so angles follow the usual convention
    orient = np.degrees(np.arctan2(-gy, gx)) % 180.0
    hist, edges = np.histogram(orient, bins=bins, range=(0.0, 180.0), weights=gx**2 + gy**2)
    k = int(np.argmax(hist))
    return float(((edges[k] + edges[k + 1]) / 2 + 90.0) % 180.0)


def line_footprint(angle_deg: float, length: int) -> np.ndarray:
    """Boolean footprint of a one-pixel line through the centre."""
    half = length // 2
    size = 2 * half + 1
    fp = np.zeros((size, size), dtype=bool)
    a = math.radians(angle_deg)
    for s in np.linspace(-half, half, 4 * size):
        y = int(round(half - s * math.sin(a)))
        x = int(round(half + s * math.cos(a)))
        fp[y, x] = True
    return fp


def derain(img, params: ClassicalParams | None = None):
    """Oriented median across the dominant streak direction.

    Rain only ever brightens, so each pixel keeps the smaller of its value
    and the oriented median.
    """
    p = params or ClassicalParams()
    img = as_image(img)
    angle = streak_angle(img, p.derain_bins)
    fp = line_footprint(angle + 90.0, p.derain_length)
    med = _per_channel(lambda ch: ndimage.median_filter(ch, footprint=fp, mode="reflect"), img)
    return np.minimum(img, med)


def delowlight(img, params: ClassicalParams | None = None):
    """Invert ``gain * x**gamma`` with parameters fitted so the 1st/99th
    luminance percentiles land on typical clean-image levels."""
    p = params or ClassicalParams()
    img = as_image(img)
    lo, hi = np.percentile(to_gray(img), p.low_ref_percentiles)
    lo = max(lo, 1e-4)
    hi = max(hi, lo * 1.01)
    ref_lo, ref_hi = p.low_ref_levels
    gamma = float(np.clip(math.log(hi / lo) / math.log(ref_hi / ref_lo), 1.0, 4.0))
    gain = float(np.clip(hi / ref_hi**gamma, 1e-3, 1.0))
    x = img / gain
    return np.sign(x) * np.abs(x) ** (1.0 / gamma)


def desnow(img, params: ClassicalParams | None = None):
    """Replace small bright blobs by a grey opening of the image."""
    p = params or ClassicalParams()
    img = as_image(img)
    opened = _per_channel(lambda ch: ndimage.grey_opening(ch, size=p.snow_size, mode="reflect"), img)
    excess = to_gray(img) - to_gray(opened)
    mask = ndimage.binary_dilation(excess > p.snow_threshold, iterations=1)[:, :, None]
    return np.where(mask, opened, img)


def classical_for_symbol(symbol: str, params: ClassicalParams | None = None):
    if symbol in NOISE_SIGMA:
        sigma = NOISE_SIGMA[symbol]
        return lambda img: denoise(img, sigma, params)
    fn = {"haze": dehaze, "rain": derain, "low": delowlight, "snow": desnow}.get(symbol)
    if fn is None:
        raise UnknownBasisError(symbol)
    return lambda img: fn(img, params)


def classical_restore(img, basis, params: ClassicalParams | None = None):
    """Remove each component of ``basis`` outermost-first."""
    basis = as_label(basis)
    out = as_image(img)
    for symbol in reversed(basis.physical()):
        out = classical_for_symbol(symbol, params)(out)
    return out


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------


@dataclass
class RestorerRegistry:
    """The restoration "model": the bases it knows and how it removes them.

    ``mode`` is ``"oracle"`` (exact inverses, needs a synthesis record) or
    ``"classical"``.  ``absent`` controls an oracle asked to remove a basis
    that is not (fully) present: ``"error"`` raises, ``"skip"`` removes the
    parts that are present and leaves the image alone if none are, the way
    a trained network passes through degradations it does not see.
    """

    bases: BasisSet
    mode: str = "oracle"
    classical: ClassicalParams = field(default_factory=ClassicalParams)
    absent: str = "error"

    def __post_init__(self):
        if not isinstance(self.bases, BasisSet):
            self.bases = BasisSet(self.bases)
        if self.mode not in ("oracle", "classical"):
            raise ValueError(f"unknown restorer mode {self.mode!r}")
        if self.absent not in ("error", "skip"):
            raise ValueError(f"unknown absent policy {self.absent!r}")
        if len(self.bases) == 0:
            raise ValueError("registry needs at least one basis")
        if self.mode == "classical":
            for b in self.bases:
                for s in b.parts:
                    classical_for_symbol(s)

    @classmethod
    def from_config(cls, cfg: dict) -> "RestorerRegistry":
        unknown = set(cfg) - {"mode", "bases", "absent"}
        if unknown:
            raise ValueError(f"unknown registry config keys: {sorted(unknown)}")
        return cls(BasisSet(cfg["bases"]), cfg.get("mode", "oracle"), absent=cfg.get("absent", "error"))

    def to_config(self) -> dict:
        return {"mode": self.mode, "bases": [str(b) for b in self.bases], "absent": self.absent}

    def __contains__(self, basis) -> bool:
        return as_label(basis) in self.bases

    def step(self, img, basis, context: SynthesisRecord | None = None):
        """One restoration call; returns (image, updated context)."""
        basis = as_label(basis)
        if basis not in self.bases:
            raise UnknownBasisError(f"{basis} is not a registered basis")
        if self.mode == "oracle":
            if context is None:
                raise ValueError("oracle restorers need the synthesis record as context")
            if self.absent == "skip":
                part = present_part(context, basis)
                if part is None:
                    return as_image(img), context
                return oracle_remove(img, part, context)
            return oracle_remove(img, basis, context)
        return classical_restore(img, basis, self.classical), context

    def restore(self, img, basis, context: SynthesisRecord | None = None) -> np.ndarray:
        return self.step(img, basis, context)[0]

    def step_blind(self, img, context: SynthesisRecord | None = None):
        """Blind restoration: the model picks what to remove itself.

        The oracle removes the outermost remaining component it knows; the
        classical model applies whichever registered basis changes the image
        most, standing in for a network that attacks the most visible
        degradation first.
        """
        if self.mode == "oracle":
            if context is None or not context.applied:
                return as_image(img), context
            for comp in reversed(context.applied):
                lab = Label((comp.symbol,))
                if lab in self.bases:
                    return oracle_remove(img, lab, context)
            raise UnknownBasisError(f"no registered basis matches {context.label}")
        img = as_image(img)
        best, best_change = img, -1.0
        for b in self.bases:
            cand = classical_restore(img, b, self.classical)
            change = float(np.mean(np.abs(cand - img)))
            if change > best_change:
                best, best_change = cand, change
        return best, context
