"""Seeded, exactly invertible synthetic degradations.

Every operator is deterministic given its parameters; the stochastic ones
(noise, rain, snow) regenerate their additive layer from a stored 64-bit
seed.  Nothing here clips, so each forward operator has an exact inverse
(see :mod:`chainrestore.restorers`).

Composites are always applied in physical order: low-light, haze,
rain/snow, then sensor noise.
"""

from __future__ import annotations

import colorsys
import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Union

import numpy as np
from scipy import ndimage

from .algebra import Label, as_label, physical_key
from .imaging import as_image, load_png, quantize, save_png

UIRD12 = [
    "n1", "n2", "n5", "r", "h", "h+r", "h+n1", "h+n5", "r+n1", "r+n5", "h+r+n1", "h+r+n5",
]

NOISE_SIGMA = {"noise15": 15.0, "noise25": 25.0, "noise50": 50.0}

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class NoiseParams:
    sigma: float  # on the 0..255 scale
    seed: int


@dataclass(frozen=True)
class HazeParams:
    airlight: float
    mode: str = "uniform"  # "uniform" | "ramp"
    t: float = 0.6
    t_left: float = 0.3
    t_right: float = 0.9


@dataclass(frozen=True)
class RainParams:
    count: int
    angle: float  # degrees, 90 = vertical
    length: float
    intensity: float
    blur: float
    seed: int


@dataclass(frozen=True)
class LowParams:
    gamma: float
    gain: float


@dataclass(frozen=True)
class SnowParams:
    count: int
    radius_min: float
    radius_max: float
    intensity: float
    seed: int


Params = Union[NoiseParams, HazeParams, RainParams, LowParams, SnowParams]


def params_type(symbol: str) -> type:
    if symbol in NOISE_SIGMA:
        return NoiseParams
    return {"haze": HazeParams, "rain": RainParams, "low": LowParams, "snow": SnowParams}[symbol]


@dataclass(frozen=True)
class Component:
    symbol: str
    params: Params

    def to_dict(self) -> dict:
        d = {"symbol": self.symbol, **asdict(self.params)}
        d.setdefault("seed", None)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Component":
        d = dict(d)
        symbol = d.pop("symbol")
        ptype = params_type(symbol)
        names = {f.name for f in fields(ptype)}
        if "seed" not in names and d.get("seed") is None:
            d.pop("seed", None)
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown parameters for {symbol}: {sorted(unknown)}")
        return cls(symbol, ptype(**d))


@dataclass
class SynthesisRecord:
    """How a degraded image was made: the ordered list of applied components."""

    clean_ref: str
    applied: list[Component] = field(default_factory=list)

    @property
    def label(self) -> Label | None:
        if not self.applied:
            return None
        return Label(tuple(c.symbol for c in self.applied))

    def to_dict(self) -> dict:
        return {
            "clean_ref": self.clean_ref,
            "label": str(self.label) if self.applied else "",
            "applied": [c.to_dict() for c in self.applied],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisRecord":
        return cls(d.get("clean_ref", ""), [Component.from_dict(c) for c in d["applied"]])


# ---------------------------------------------------------------------------
# additive / multiplicative fields
# ---------------------------------------------------------------------------


def noise_field(shape, params: NoiseParams) -> np.ndarray:
    rng = np.random.default_rng(params.seed)
    return rng.standard_normal(shape) * (params.sigma / 255.0)


def transmission(shape, params: HazeParams) -> np.ndarray:
    """Transmission map of shape (H, W, 1)."""
    h, w = shape[:2]
    if params.mode == "uniform":
        t = np.full((h, w), float(params.t))
    elif params.mode == "ramp":
        t = np.broadcast_to(np.linspace(params.t_left, params.t_right, w), (h, w)).copy()
    else:
        raise ValueError(f"unknown transmission mode {params.mode!r}")
    if np.any(t <= 0) or np.any(t > 1):
        raise ValueError("transmission must lie in (0, 1]")
    return t[:, :, None]


def _line_peak(blur: float) -> float:
    # peak of a blurred one-pixel-wide line, used to normalise streak height
    probe = np.zeros((1, 33))
    probe[0, 16] = 1.0
    return float(ndimage.gaussian_filter1d(probe, blur, axis=1, mode="constant").max())


def rain_layer(shape, params: RainParams) -> np.ndarray:
    """Non-negative streak layer of shape (H, W, 1)."""
    h, w = shape[:2]
    layer = np.zeros((h, w))
    if params.count <= 0 or params.intensity == 0:
        return layer[:, :, None]
    rng = np.random.default_rng(params.seed)
    n = int(params.count)
    cy = rng.uniform(-params.length / 2, h + params.length / 2, n)
    cx = rng.uniform(-params.length / 2, w + params.length / 2, n)
    theta = np.deg2rad(params.angle + rng.normal(0.0, 2.0, n))
    lengths = params.length * rng.uniform(0.6, 1.2, n)
    weights = rng.uniform(0.6, 1.0, n)
    steps = np.linspace(-0.5, 0.5, int(np.ceil(params.length * 2.4)) + 2)
    # angle measured from the x axis, image y grows downwards
    ys = cy[:, None] - np.sin(theta)[:, None] * lengths[:, None] * steps[None, :]
    xs = cx[:, None] + np.cos(theta)[:, None] * lengths[:, None] * steps[None, :]
    yi = np.rint(ys).astype(int).ravel()
    xi = np.rint(xs).astype(int).ravel()
    wi = np.repeat(weights, steps.size)
    keep = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    np.maximum.at(layer, (yi[keep], xi[keep]), wi[keep])
    if params.blur > 0:
        layer = ndimage.gaussian_filter(layer, params.blur, mode="constant") / _line_peak(params.blur)
    return (params.intensity * np.maximum(layer, 0.0))[:, :, None]


def snow_layer(shape, params: SnowParams) -> np.ndarray:
    """Non-negative layer of soft discs, shape (H, W, 1)."""
    h, w = shape[:2]
    layer = np.zeros((h, w))
    if params.count <= 0 or params.intensity == 0:
        return layer[:, :, None]
    rng = np.random.default_rng(params.seed)
    n = int(params.count)
    cy = rng.uniform(0, h, n)
    cx = rng.uniform(0, w, n)
    radius = rng.uniform(params.radius_min, params.radius_max, n)
    bright = params.intensity * rng.uniform(0.5, 1.0, n)
    for y0, x0, r, b in zip(cy, cx, radius, bright):
        reach = int(np.ceil(2 * r)) + 1
        y_lo, y_hi = max(int(y0) - reach, 0), min(int(y0) + reach + 1, h)
        x_lo, x_hi = max(int(x0) - reach, 0), min(int(x0) + reach + 1, w)
        if y_lo >= y_hi or x_lo >= x_hi:
            continue
        yy, xx = np.mgrid[y_lo:y_hi, x_lo:x_hi]
        d = np.hypot(yy + 0.5 - y0, xx + 0.5 - x0)
        # flat core with a smooth shoulder
        blob = b * np.clip(1.5 - d / r, 0.0, 1.0) ** 2
        layer[y_lo:y_hi, x_lo:x_hi] = np.maximum(layer[y_lo:y_hi, x_lo:x_hi], blob)
    return layer[:, :, None]


def _spow(x: np.ndarray, p: float) -> np.ndarray:
    # sign-preserving power keeps out-of-range values finite
    return np.sign(x) * np.abs(x) ** p


# ---------------------------------------------------------------------------
# forward operators
# ---------------------------------------------------------------------------


def apply_noise(img, params: NoiseParams) -> np.ndarray:
    img = as_image(img)
    if params.sigma == 0:
        return img.copy()
    return img + noise_field(img.shape, params)


def apply_haze(img, params: HazeParams) -> np.ndarray:
    img = as_image(img)
    if not 0 < params.airlight <= 1:
        raise ValueError("airlight must lie in (0, 1]")
    t = transmission(img.shape, params)
    return img * t + params.airlight * (1.0 - t)


def apply_rain(img, params: RainParams) -> np.ndarray:
    img = as_image(img)
    return img + rain_layer(img.shape, params)


def apply_snow(img, params: SnowParams) -> np.ndarray:
    img = as_image(img)
    return img + snow_layer(img.shape, params)


def apply_low_light(img, params: LowParams) -> np.ndarray:
    if params.gamma < 1 or not 0 < params.gain <= 1:
        raise ValueError("low-light needs gamma >= 1 and 0 < gain <= 1")
    img = as_image(img)
    return params.gain * _spow(img, params.gamma)


def apply_component(img, comp: Component) -> np.ndarray:
    s = comp.symbol
    if s in NOISE_SIGMA:
        return apply_noise(img, comp.params)
    return {"haze": apply_haze, "rain": apply_rain, "snow": apply_snow, "low": apply_low_light}[s](
        img, comp.params
    )


def invert_component(img, comp: Component) -> np.ndarray:
    """Exact inverse of :func:`apply_component`."""
    img = as_image(img)
    s, p = comp.symbol, comp.params
    if s in NOISE_SIGMA:
        return img - noise_field(img.shape, p) if p.sigma else img.copy()
    if s == "haze":
        t = transmission(img.shape, p)
        return (img - p.airlight * (1.0 - t)) / t
    if s == "rain":
        return img - rain_layer(img.shape, p)
    if s == "snow":
        return img - snow_layer(img.shape, p)
    if s == "low":
        return _spow(img / p.gain, 1.0 / p.gamma)
    raise ValueError(f"no inverse for {s!r}")


def apply_components(img, components) -> np.ndarray:
    out = as_image(img)
    for comp in components:
        out = apply_component(out, comp)
    return out


# ---------------------------------------------------------------------------
# parameter sampling and composite synthesis
# ---------------------------------------------------------------------------


@dataclass
class SynthesisConfig:
    """Sampling ranges for the degradation parameters.

    Counts for rain and snow are per 256x256 pixels and scale with area.
    """

    haze_airlight: tuple[float, float] = (0.7, 1.0)
    haze_t: tuple[float, float] = (0.4, 0.8)
    haze_mode: str = "uniform"
    haze_ramp: tuple[float, float] = (0.3, 0.9)
    rain_count: tuple[int, int] = (300, 500)
    rain_angle: tuple[float, float] = (60.0, 120.0)
    rain_length: tuple[float, float] = (16.0, 32.0)
    rain_intensity: tuple[float, float] = (0.2, 0.4)
    rain_blur: tuple[float, float] = (0.5, 1.0)
    low_gamma: tuple[float, float] = (1.5, 3.0)
    low_gain: tuple[float, float] = (0.3, 0.7)
    snow_count: tuple[int, int] = (80, 200)
    snow_radius: tuple[float, float] = (1.0, 3.5)
    snow_intensity: tuple[float, float] = (0.3, 0.7)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown synthesis config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _seed64(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1, dtype=np.int64))


def sample_params(symbol: str, rng: np.random.Generator, config: SynthesisConfig, shape) -> Params:
    area = shape[0] * shape[1] / 65536.0
    u = rng.uniform
    if symbol in NOISE_SIGMA:
        return NoiseParams(NOISE_SIGMA[symbol], _seed64(rng))
    if symbol == "haze":
        a = float(u(*config.haze_airlight))
        if config.haze_mode == "uniform":
            return HazeParams(a, "uniform", t=float(u(*config.haze_t)))
        lo, hi = config.haze_ramp
        left, right = (lo, hi) if rng.random() < 0.5 else (hi, lo)
        return HazeParams(a, "ramp", t_left=left, t_right=right)
    if symbol == "rain":
        count = int(round(rng.integers(config.rain_count[0], config.rain_count[1] + 1) * area))
        return RainParams(
            count,
            float(u(*config.rain_angle)),
            float(u(*config.rain_length)),
            float(u(*config.rain_intensity)),
            float(u(*config.rain_blur)),
            _seed64(rng),
        )
    if symbol == "low":
        return LowParams(float(u(*config.low_gamma)), float(u(*config.low_gain)))
    if symbol == "snow":
        count = int(round(rng.integers(config.snow_count[0], config.snow_count[1] + 1) * area))
        return SnowParams(count, config.snow_radius[0], config.snow_radius[1],
                          float(u(*config.snow_intensity)), _seed64(rng))
    raise ValueError(f"unknown symbol {symbol!r}")


def _stream(master_seed: int, *keys) -> np.random.Generator:
    words = [int(k) if isinstance(k, (int, np.integer)) else zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(np.random.SeedSequence([int(master_seed) % 2**64, *words]))


def synthesize(clean, label, config: SynthesisConfig | None = None, master_seed: int = 0,
               clean_ref: str = "") -> tuple[np.ndarray, SynthesisRecord]:
    """Degrade ``clean`` with every component of ``label``.

    Components are applied in physical order whatever the order written in
    the label, and each draws its parameters from a stream keyed by
    ``master_seed`` and its symbol, so permuted labels give identical output.
    """
    config = config or SynthesisConfig()
    clean = as_image(clean)
    label = as_label(label)
    seen: dict[str, int] = {}
    applied = []
    for symbol in label.physical():
        occurrence = seen.get(symbol, 0)
        seen[symbol] = occurrence + 1
        rng = _stream(master_seed, symbol, occurrence)
        applied.append(Component(symbol, sample_params(symbol, rng, config, clean.shape)))
    record = SynthesisRecord(clean_ref, applied)
    return apply_components(clean, applied), record


def _saturated(rng: np.random.Generator, value: tuple[float, float], hue=None) -> np.ndarray:
    h = rng.uniform(0, 1) if hue is None else hue % 1.0
    return np.array(colorsys.hsv_to_rgb(h, rng.uniform(0.85, 1.0), rng.uniform(*value)))


def gen_clean(seed: int, height: int = 256, width: int = 256, channels: int = 3) -> np.ndarray:
    """Procedural clean image in [0.05, 0.95].

    A two-colour gradient background with a shared band-limited luminance
    texture, plus a few anti-aliased discs and rectangles.  At least one
    shape is dark and one is bright so the luminance range stays wide, and
    colours are saturated so the dark-channel statistic of clean images is
    low, as for natural outdoor scenes.
    """
    if height < 64 or width < 64:
        raise ValueError("clean images must be at least 64x64")
    rng = _stream(seed, "clean")
    yy, xx = np.mgrid[0:height, 0:width]
    y = yy / (height - 1) - 0.5
    x = xx / (width - 1) - 0.5

    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * x + np.sin(angle) * y
    wobble = ndimage.gaussian_filter(rng.standard_normal((height, width)), min(height, width) / 8)
    ramp = ramp + 0.3 * wobble / (wobble.std() + 1e-12)
    mix = (ramp - ramp.min()) / (ramp.max() - ramp.min())
    hue = rng.uniform(0, 1)
    c1 = _saturated(rng, (0.35, 0.9), hue)
    c2 = _saturated(rng, (0.35, 0.9), hue + rng.uniform(-0.12, 0.12))
    img = c1 * (1 - mix[:, :, None]) + c2 * mix[:, :, None]

    tex = ndimage.gaussian_filter(rng.standard_normal((height, width)), rng.uniform(2.0, 4.0))
    img *= (1.0 + rng.uniform(0.08, 0.18) * tex / (tex.std() + 1e-12))[:, :, None]

    n_shapes = int(rng.integers(4, 9))
    for i in range(n_shapes):
        # the last two shapes are drawn on top: one dark, one near-white
        # (the analogue of sky in outdoor scenes)
        if i == n_shapes - 2:
            colour = _saturated(rng, (0.05, 0.2))
        elif i == n_shapes - 1:
            colour = np.full(3, rng.uniform(0.92, 1.0)) - rng.uniform(0, 0.08, 3)
        else:
            colour = _saturated(rng, (0.1, 1.0))
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        size = rng.uniform(0.12, 0.22 if i >= n_shapes - 2 else 0.2) * min(height, width)
        if rng.random() < 0.5:
            mask = (np.hypot(yy - cy, xx - cx) < size).astype(float)
        else:
            aspect = rng.uniform(0.5, 2.0)
            mask = ((np.abs(yy - cy) < size / aspect) & (np.abs(xx - cx) < size * aspect / 2)).astype(float)
        mask = ndimage.gaussian_filter(mask, 0.8)[:, :, None]
        shade = 1.0 + 0.2 * (rng.uniform(-1, 1) * x + rng.uniform(-1, 1) * y)[:, :, None]
        img = img * (1 - mask) + colour * shade * mask

    if channels == 1:
        img = (img @ np.array([0.299, 0.587, 0.114]))[:, :, None]
    elif channels != 3:
        raise ValueError("channels must be 1 or 3")
    lum = img @ np.array([0.299, 0.587, 0.114]) if channels == 3 else img[:, :, 0]
    lo, hi = np.percentile(lum, [0.5, 99.5])
    return np.clip(0.1 + 0.8 * (img - lo) / (hi - lo), 0.05, 0.95)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def build_dataset(out_dir, categories=None, per_category: int = 100, seed: int = 0,
                  size: tuple[int, int] = (256, 256), config: SynthesisConfig | None = None,
                  clean_dir=None) -> Path:
    """Write a paired dataset and return the path to ``manifest.json``.

    Layout::

        out_dir/clean/NNNN.png
        out_dir/<label>/NNNN.png
        out_dir/manifest.json

    Clean image ``i`` is shared by every category.  Degraded images are made
    from the *quantized* clean PNG so they can be regenerated bit-exactly
    from the manifest.  ``clean_dir`` switches the clean sources to the PNGs
    found there (sorted by name) instead of procedural images.
    """
    out_dir = Path(out_dir)
    config = config or SynthesisConfig()
    labels = [as_label(c) for c in (categories if categories is not None else UIRD12)]
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = sorted(Path(clean_dir).glob("*.png")) if clean_dir else None
    if sources is not None and len(sources) < per_category:
        raise ValueError(f"{clean_dir} holds {len(sources)} PNGs, need {per_category}")

    cleans = []
    for i in range(per_category):
        if sources is not None:
            img = load_png(sources[i])
        else:
            img = gen_clean(int(_stream(seed, "clean-source", i).integers(0, 2**62)), *size)
        rel = f"clean/{i:04d}.png"
        save_png(img, out_dir / rel)
        cleans.append((rel, quantize(img)))

    entries = []
    for label in labels:
        for i, (rel, clean) in enumerate(cleans):
            master = int(_stream(seed, "entry", label.name, i).integers(0, 2**62))
            degraded, record = synthesize(clean, label, config, master, clean_ref=rel)
            drel = f"{label.name}/{i:04d}.png"
            save_png(degraded, out_dir / drel)
            entries.append({"clean": rel, "degraded": drel, "label": str(label),
                            "record": record.to_dict()})

    manifest = {"version": MANIFEST_VERSION, "seed": seed, "synthesis": config.to_dict(),
                "entries": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {manifest.get('version')}")
    manifest["root"] = path.parent
    for e in manifest["entries"]:
        e["record_obj"] = SynthesisRecord.from_dict(e["record"])
    return manifest


def regenerate(manifest: dict, entry: dict) -> tuple[np.ndarray, np.ndarray]:
    """(clean, degraded) for a manifest entry, degraded left unquantized."""
    clean = load_png(Path(manifest["root"]) / entry["clean"])
    record = entry.get("record_obj") or SynthesisRecord.from_dict(entry["record"])
    return clean, apply_components(clean, record.applied)


def physical_sorted(symbols) -> list[str]:
    return sorted(symbols, key=physical_key)
