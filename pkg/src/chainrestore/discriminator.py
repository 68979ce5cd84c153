"""The degradation discriminator.

Eight handcrafted statistics per patch feed a multinomial logistic
regression trained by plain mini-batch gradient descent.  At inference the
softmax outputs of N random crops are averaged, shifted by the soft margins
(a bonus per unit of basis order plus a per-basis offset) and the argmax
picks the next basis to remove, or "clean".
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .algebra import Label, as_label
from .imaging import as_image, clamp, random_crop, to_gray

log = logging.getLogger(__name__)

CLEAN = "clean"
DEGRADED = "degraded"

FEATURE_NAMES = [
    "mean_luma",
    "std_luma",
    "dark_channel",
    "laplacian_energy",
    "vertical_gradient_ratio",
    "diagonal_anisotropy",
    "saturation",
    "luma_entropy",
]

_LAPLACE = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


class TrainingError(RuntimeError):
    pass


def extract_features(patch) -> np.ndarray:
    """The 8 statistics of a patch (at least 16x16), on its clamped values."""
    img = clamp(as_image(patch))
    if img.shape[0] < 16 or img.shape[1] < 16:
        raise ValueError(f"patch too small for features: {img.shape[:2]}")
    g = to_gray(img)
    lap = ndimage.correlate(g, _LAPLACE, mode="reflect")[1:-1, 1:-1]
    gx = np.diff(g, axis=1)
    gy = np.diff(g, axis=0)
    ex, ey = np.mean(gx**2), np.mean(gy**2)
    d1 = g[1:, 1:] - g[:-1, :-1]
    d2 = g[1:, :-1] - g[:-1, 1:]
    e1, e2 = np.mean(d1**2), np.mean(d2**2)
    eps = 1e-12
    hist, _ = np.histogram(g, bins=32, range=(0.0, 1.0))
    prob = hist[hist > 0] / g.size
    return np.array(
        [
            g.mean(),
            (g - g.flat[0]).std(),  # shifted so flat patches give exactly 0
            ndimage.minimum_filter(img.min(axis=2), size=7, mode="nearest").mean(),
            np.mean(lap**2),
            ex / (ex + ey + eps),
            (e1 - e2) / (e1 + e2 + eps),
            np.mean(img.max(axis=2) - img.min(axis=2)),
            float(-(prob * np.log2(prob)).sum()),
        ]
    )


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ClassifierModel:
    """Softmax regression over standardized features.

    ``class_labels`` lists the bases in order followed by ``"clean"``; a
    blind model has exactly ``["degraded", "clean"]``.
    """

    class_labels: list[str]
    weights: np.ndarray  # (n_classes, n_features)
    biases: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray

    def __post_init__(self):
        if not self.class_labels or self.class_labels[-1] != CLEAN:
            raise ValueError("the last class must be 'clean'")
        self.weights = np.asarray(self.weights, dtype=float).reshape(len(self.class_labels), -1)
        self.biases = np.asarray(self.biases, dtype=float)
        self.feature_means = np.asarray(self.feature_means, dtype=float)
        self.feature_stds = np.asarray(self.feature_stds, dtype=float)

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    @property
    def is_blind(self) -> bool:
        return self.class_labels == [DEGRADED, CLEAN]

    @property
    def bases(self) -> list[Label]:
        if self.is_blind:
            return []
        return [as_label(c) for c in self.class_labels[:-1]]

    def logits(self, features: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(features) - self.feature_means) / self.feature_stds
        return z @ self.weights.T + self.biases

    def patch_probs(self, patch) -> np.ndarray:
        return softmax(self.logits(extract_features(patch)))[0]

    def to_dict(self) -> dict:
        return {
            "class_labels": list(self.class_labels),
            "feature_means": self.feature_means.tolist(),
            "feature_stds": self.feature_stds.tolist(),
            "weights": self.weights.ravel().tolist(),
            "biases": self.biases.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierModel":
        return cls(d["class_labels"], d["weights"], d["biases"], d["feature_means"], d["feature_stds"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrainHyper:
    lr: float = 2e-3
    epochs: int = 1000
    batch: int | None = 64  # None = full batch
    seed: int = 0
    flips: bool = True
    optimizer: str = "adam"  # "adam" | "gd"
    betas: tuple[float, float] = (0.9, 0.999)


def _cross_entropy(probs, y) -> float:
    return float(-np.mean(np.log(probs[np.arange(len(y)), y] + 1e-300)))


def fit_softmax(x: np.ndarray, y: np.ndarray, n_classes: int, hyper: TrainHyper):
    """Mini-batch gradient descent on the mean softmax cross-entropy.

    ``x`` must already be standardized.  ``hyper.optimizer`` selects plain
    gradient steps or Adam-scaled steps.  Weights start at zero, so the
    result depends only on the data and the shuffling seed.  Returns
    ``(W, b, losses)`` where ``losses[e]`` is the full-data loss after
    epoch ``e``.
    """
    if hyper.optimizer not in ("adam", "gd"):
        raise ValueError(f"unknown optimizer {hyper.optimizer!r}")
    n, d = x.shape
    params = [np.zeros((n_classes, d)), np.zeros(n_classes)]
    moments = [[np.zeros_like(p), np.zeros_like(p)] for p in params]
    beta1, beta2 = hyper.betas
    onehot = np.eye(n_classes)[y]
    rng = np.random.default_rng(hyper.seed)
    batch = n if not hyper.batch or hyper.batch >= n else hyper.batch
    losses = []
    step = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(n) if batch < n else np.arange(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            w, b = params
            err = (softmax(x[idx] @ w.T + b) - onehot[idx]) / len(idx)
            grads = [err.T @ x[idx], err.sum(axis=0)]
            step += 1
            for p, g, m in zip(params, grads, moments):
                if hyper.optimizer == "gd":
                    p -= hyper.lr * g
                    continue
                m[0] = beta1 * m[0] + (1 - beta1) * g
                m[1] = beta2 * m[1] + (1 - beta2) * g * g
                m_hat = m[0] / (1 - beta1**step)
                v_hat = m[1] / (1 - beta2**step)
                p -= hyper.lr * m_hat / (np.sqrt(v_hat) + 1e-8)
        w, b = params
        loss = _cross_entropy(softmax(x @ w.T + b), y)
        if not np.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at epoch {epoch} (optimizer={hyper.optimizer}, lr={hyper.lr}, "
                f"batch={batch}, max |w|={np.abs(w).max():.3g})"
            )
        losses.append(loss)
    return params[0], params[1], losses


def train(samples: Sequence[tuple], class_labels: Sequence[str], hyper: TrainHyper | None = None):
    """Train a discriminator on ``(patch, class_index)`` pairs.

    Returns ``(model, losses)``.  Every class must appear in ``samples``.
    Patches are randomly flipped (seeded) when ``hyper.flips`` is set.
    """
    hyper = hyper or TrainHyper()
    class_labels = list(class_labels)
    y = np.array([int(c) for _, c in samples])
    missing = set(range(len(class_labels))) - set(y.tolist())
    if missing:
        raise ValueError(f"classes without samples: {[class_labels[i] for i in sorted(missing)]}")
    rng = np.random.default_rng([hyper.seed, 1])
    feats = []
    for patch, _ in samples:
        patch = as_image(patch)
        if hyper.flips:
            if rng.random() < 0.5:
                patch = patch[::-1]
            if rng.random() < 0.5:
                patch = patch[:, ::-1]
        feats.append(extract_features(patch))
    return train_on_features(np.array(feats), y, class_labels, hyper)


def train_on_features(feats: np.ndarray, y: np.ndarray, class_labels, hyper: TrainHyper | None = None):
    hyper = hyper or TrainHyper()
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std[std < 1e-12] = 1.0
    w, b, losses = fit_softmax((feats - mean) / std, y, len(class_labels), hyper)
    log.info("trained %d-class discriminator: final loss %.4f", len(class_labels), losses[-1])
    return ClassifierModel(list(class_labels), w, b, mean, std), losses


def accuracy(model: ClassifierModel, samples) -> float:
    feats = np.array([extract_features(p) for p, _ in samples])
    y = np.array([c for _, c in samples])
    return float(np.mean(np.argmax(model.logits(feats), axis=1) == y))


def predict_probs(model: ClassifierModel, img, n_patches: int = 12, patch_size: int = 128,
                  seed=0) -> np.ndarray:
    """Average softmax output over ``n_patches`` random crops."""
    img = as_image(img)
    rng = np.random.default_rng(seed)
    v = np.zeros(model.n_classes)
    for _ in range(n_patches):
        v += model.patch_probs(random_crop(img, patch_size, rng))
    return v / n_patches


# ---------------------------------------------------------------------------
# soft margins and the decision rule
# ---------------------------------------------------------------------------


@dataclass
class MarginConfig:
    """Order bonus ``epsilon_o`` and per-basis offsets ``epsilon_b``."""

    epsilon_o: float = 0.03
    epsilon_b: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.epsilon_o < 0:
            raise ValueError("epsilon_o must be non-negative")
        self.epsilon_b = {as_label(k): float(v) for k, v in self.epsilon_b.items()}

    @classmethod
    def defaults(cls, bases, epsilon_o: float = 0.03, low_offset: float = -0.05) -> "MarginConfig":
        """Order bonus 0.03 and -0.05 on every basis that contains low-light."""
        return cls(epsilon_o, {b: low_offset for b in map(as_label, bases) if "low" in b.parts})

    @classmethod
    def zero(cls) -> "MarginConfig":
        return cls(0.0, {})

    def offset(self, basis) -> float:
        return self.epsilon_b.get(as_label(basis), 0.0)

    def to_dict(self) -> dict:
        return {"epsilon_o": self.epsilon_o, "epsilon_b": {str(k): v for k, v in self.epsilon_b.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "MarginConfig":
        unknown = set(d) - {"epsilon_o", "epsilon_b"}
        if unknown:
            raise ValueError(f"unknown margin keys: {sorted(unknown)}")
        return cls(float(d.get("epsilon_o", 0.03)), dict(d.get("epsilon_b", {})))


def apply_margins(v, margins: MarginConfig, bases: Sequence) -> np.ndarray:
    """Shift each basis probability by ``order * epsilon_o + epsilon_b``.

    ``v`` has one entry per basis plus a trailing clean entry, which is left
    unshifted.  The result is not renormalized.
    """
    v = np.asarray(v, dtype=float)
    bases = [as_label(b) for b in bases]
    if v.shape != (len(bases) + 1,):
        raise ValueError(f"probability vector of length {v.size} does not match {len(bases)} bases + clean")
    out = v.copy()
    for i, b in enumerate(bases):
        out[i] += b.order * margins.epsilon_o + margins.offset(b)
    return out


class _BlindMarker:
    """Stands in for "some degradation" in blind decisions."""

    def __repr__(self):
        return "<degraded>"

    def __str__(self):
        return DEGRADED


BLIND_DEGRADED = _BlindMarker()


@dataclass
class Decision:
    basis: Label | _BlindMarker | None  # None means clean
    probs: np.ndarray
    revised: np.ndarray

    @property
    def clean(self) -> bool:
        return self.basis is None


def decide(v, margins: MarginConfig, bases: Sequence, mode: str = "non_blind") -> Decision:
    """Turn a probability vector into a decision; ties go to the lower index."""
    v = np.asarray(v, dtype=float)
    if mode == "blind":
        if v.size != 2:
            raise ValueError("blind decisions need a 2-class (degraded, clean) vector")
        return Decision(None if v[1] > v[0] else BLIND_DEGRADED, v, v.copy())
    if mode != "non_blind":
        raise ValueError(f"unknown mode {mode!r}")
    revised = apply_margins(v, margins, bases)
    k = int(np.argmax(revised))
    return Decision(None if k == len(bases) else as_label(bases[k]), v, revised)


def discriminate(model: ClassifierModel, img, margins: MarginConfig, mode: str = "non_blind",
                 n_patches: int = 12, patch_size: int = 128, seed=0) -> Decision:
    """Classify ``img`` and pick the next basis (or clean)."""
    if mode == "blind" and not model.is_blind:
        raise ValueError("blind mode needs a 2-class degraded/clean model")
    if mode == "non_blind" and model.is_blind:
        raise ValueError("non-blind mode needs a per-basis model")
    v = predict_probs(model, img, n_patches, patch_size, seed)
    return decide(v, margins, model.bases, mode)


# ---------------------------------------------------------------------------
# training sets
# ---------------------------------------------------------------------------


def make_training_set(bases, n_images: int = 30, patches_per_image: int = 4, seed: int = 0,
                      size: tuple[int, int] = (256, 256), patch_size: int = 128,
                      config=None, blind: bool = False):
    """Synthesize labelled patches for every basis plus clean.

    Returns ``(samples, class_labels)``.  Each class gets its own clean
    sources.  With ``blind=True`` the classes are ``degraded``/``clean`` and
    degraded images cycle through ``bases``.
    """
    from .synthesis import _stream, gen_clean, quantize, synthesize

    bases = [as_label(b) for b in bases]
    class_labels = [DEGRADED, CLEAN] if blind else [str(b) for b in bases] + [CLEAN]
    samples = []
    for ci, name in enumerate(class_labels):
        for i in range(n_images):
            rng = _stream(seed, "dd-train", name, i)
            clean = quantize(gen_clean(int(rng.integers(0, 2**62)), *size))
            if name == CLEAN:
                img = clean
            else:
                label = bases[i % len(bases)] if blind else as_label(name)
                img, _ = synthesize(clean, label, config, int(rng.integers(0, 2**62)))
            for _ in range(patches_per_image):
                samples.append((random_crop(img, patch_size, rng), ci))
    return samples, class_labels
