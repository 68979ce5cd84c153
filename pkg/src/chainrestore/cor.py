"""The restoration chain: classify, remove one basis, repeat until clean."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .algebra import BasisSet, Label, as_label, decompose, enumerate_bases
from .complexity import ir
from .discriminator import BLIND_DEGRADED, ClassifierModel, Decision, MarginConfig, discriminate
from .imaging import as_image, fingerprint, psnr, ssim
from .restorers import RestorerRegistry
from .synthesis import SynthesisRecord, gen_clean, synthesize

CLEAN_DETECTED = "CleanDetected"
MAX_STEPS = "MaxSteps"
NO_PROGRESS = "NoProgress"

# isolated symbols in the order used by the step-count simulation
SIMULATION_SYMBOLS = ["low", "haze", "rain", "snow", "noise15", "noise25", "noise50"]


class UndecomposableError(ValueError):
    def __init__(self, label, bases):
        super().__init__(f"{label} cannot be built from the bases {[str(b) for b in bases]}")
        self.label = label


# ---------------------------------------------------------------------------
# discriminator sources
# ---------------------------------------------------------------------------


@dataclass
class TrainedDD:
    """Classifier-backed discriminator with soft margins and patch voting."""

    model: ClassifierModel
    margins: MarginConfig = field(default_factory=MarginConfig.zero)
    mode: str = "non_blind"
    n_patches: int = 12
    patch_size: int = 128
    seed: int = 0

    @property
    def bases(self) -> list[Label]:
        return self.model.bases

    def __call__(self, img, context, step: int) -> Decision:
        return discriminate(self.model, img, self.margins, self.mode, self.n_patches,
                            self.patch_size, seed=[self.seed, step])


@dataclass
class OracleDD:
    """Ground-truth discriminator that reads the synthesis record."""

    registry: RestorerRegistry
    mode: str = "non_blind"

    @property
    def bases(self) -> list[Label]:
        return list(self.registry.bases)

    def __call__(self, img, context, step: int) -> Decision:
        choice = oracle_dd(context, self.registry)
        bases = self.bases
        v = np.zeros(len(bases) + 1)
        v[-1 if choice is None else bases.index(choice)] = 1.0
        if self.mode == "blind":
            return Decision(None if choice is None else BLIND_DEGRADED, v, v.copy())
        return Decision(choice, v, v.copy())


@dataclass
class RandomDD:
    """No discriminator: a seeded uniform pick over the bases and "stop"."""

    bases_: list
    seed: int = 0

    def __post_init__(self):
        self.bases_ = [as_label(b) for b in self.bases_]
        self._rng = np.random.default_rng(self.seed)

    @property
    def bases(self) -> list[Label]:
        return self.bases_

    def __call__(self, img, context, step: int) -> Decision:
        n = len(self.bases_)
        k = int(self._rng.integers(0, n + 1))
        v = np.full(n + 1, 1.0 / (n + 1))
        return Decision(None if k == n else self.bases_[k], v, v.copy())


def oracle_dd(context: SynthesisRecord | None, registry: RestorerRegistry) -> Label | None:
    """The ideal next basis: outermost components first, highest order first.

    Returns None (clean) when nothing remains.  Among the registered bases
    that match a suffix of the remaining components (in composition order)
    the longest one that still leaves a minimal decomposition is chosen.
    """
    if context is None:
        raise ValueError("the oracle discriminator needs the synthesis record")
    if not context.applied:
        return None
    bases = registry.bases
    remaining = context.label
    best = decompose(remaining, bases)
    if best is None:
        raise UndecomposableError(remaining, bases)
    symbols = [c.symbol for c in context.applied]
    for j in range(len(symbols), 0, -1):
        suffix = Label(tuple(symbols[-j:]))
        if suffix not in bases:
            continue
        rest = symbols[:-j]
        if not rest:
            return suffix
        sub = decompose(Label(tuple(rest)), bases)
        if sub is not None and len(sub) == len(best) - 1:
            return suffix
    outer = symbols[-1]
    return max((b for b in best if outer in b.parts), key=lambda b: (b.order, b.key))


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass
class CoRConfig:
    max_steps: int | None = None  # default: 2 * isolated symbols + 2
    no_progress_threshold: float = 1e-4
    margins: MarginConfig = field(default_factory=MarginConfig)
    mode: str = "non_blind"
    discriminator_source: str = "trained"  # "trained" | "oracle"

    def __post_init__(self):
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.mode not in ("blind", "non_blind"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def resolved_max_steps(self, registry: RestorerRegistry) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return 2 * len(registry.bases.symbols()) + 2

    def to_dict(self) -> dict:
        return {
            "max_steps": self.max_steps,
            "no_progress_threshold": self.no_progress_threshold,
            "margins": self.margins.to_dict(),
            "mode": self.mode,
            "discriminator_source": self.discriminator_source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoRConfig":
        allowed = {"max_steps", "no_progress_threshold", "margins", "mode", "discriminator_source"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown cor config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("margins"), dict):
            d["margins"] = MarginConfig.from_dict(d["margins"])
        return cls(**d)


@dataclass
class TraceStep:
    index: int
    probs: list
    revised: list
    choice: str  # basis text, "degraded" (blind) or "clean"
    fingerprint: str
    psnr: float | None = None
    ssim: float | None = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        if d["psnr"] is not None and not np.isfinite(d["psnr"]):
            d["psnr"] = "inf"
        return d


@dataclass
class CoRTrace:
    steps: list[TraceStep] = field(default_factory=list)
    termination: str = ""
    final_fingerprint: str = ""
    final_psnr: float | None = None
    final_ssim: float | None = None

    @property
    def n_restorations(self) -> int:
        """Restoration calls actually made."""
        return sum(1 for s in self.steps if s.choice != "clean") - (self.termination != CLEAN_DETECTED)

    @property
    def chosen(self) -> list[str]:
        return [s.choice for s in self.steps]

    def to_dict(self) -> dict:
        fp = self.final_psnr
        return {
            "termination": self.termination,
            "n_restorations": self.n_restorations,
            "final_fingerprint": self.final_fingerprint,
            "final_psnr": "inf" if fp is not None and not np.isfinite(fp) else fp,
            "final_ssim": self.final_ssim,
            "steps": [s.to_dict() for s in self.steps],
        }


def _check_compatible(dd, registry: RestorerRegistry, mode: str) -> None:
    if mode == "blind":
        return
    extra = [str(b) for b in dd.bases if b not in registry.bases]
    if extra:
        raise ValueError(f"discriminator classes {extra} have no restorer in the registry")


def run_cor(img, registry: RestorerRegistry, dd: Callable, config: CoRConfig | None = None,
            context: SynthesisRecord | None = None, ground_truth=None,
            on_step: Callable | None = None):
    """Chain of restoration.

    Repeats: ask ``dd`` for the next basis; stop on clean; otherwise remove
    that basis with ``registry``.  Also stops after ``max_steps`` restorations
    or when the same basis is picked twice in a row without changing the
    image by more than ``no_progress_threshold`` (mean absolute change), or
    when a (basis, image) pair would repeat; the repeat itself is not
    logged, so trace pairs are unique.  ``on_step(index, image)`` sees every
    intermediate image.  Returns ``(image, trace)``.
    """
    config = config or CoRConfig()
    _check_compatible(dd, registry, config.mode)
    if registry.mode == "oracle" and context is None:
        raise ValueError("oracle restorers need the synthesis record as context")
    max_steps = config.resolved_max_steps(registry)
    x = as_image(img)
    ctx = context
    trace = CoRTrace()
    seen: set[tuple[str, str]] = set()
    prev_choice, prev_change = None, None

    for i in range(max_steps + 1):
        if on_step is not None:
            on_step(i, x)
        dec = dd(x, ctx, i)
        fp = fingerprint(x)
        choice = "clean" if dec.clean else str(dec.basis)
        step = TraceStep(i, dec.probs.tolist(), dec.revised.tolist(), choice, fp)
        if ground_truth is not None:
            step.psnr, step.ssim = psnr(x, ground_truth), ssim(x, ground_truth)
        if dec.clean:
            trace.steps.append(step)
            trace.termination = CLEAN_DETECTED
            break
        key = (choice, fp)
        if key in seen:
            # already recorded once; stop without logging the repeat
            trace.termination = NO_PROGRESS
            break
        stalled = choice == prev_choice and prev_change is not None and prev_change < config.no_progress_threshold
        if stalled:
            trace.steps.append(step)
            trace.termination = NO_PROGRESS
            break
        trace.steps.append(step)
        if i == max_steps:
            trace.termination = MAX_STEPS
            break
        seen.add(key)
        if dec.basis is BLIND_DEGRADED:
            new, ctx = registry.step_blind(x, ctx)
        else:
            new, ctx = registry.step(x, dec.basis, ctx)
        prev_change = float(np.mean(np.abs(new - x)))
        prev_choice = choice
        x = new

    trace.final_fingerprint = fingerprint(x)
    if ground_truth is not None:
        trace.final_psnr, trace.final_ssim = psnr(x, ground_truth), ssim(x, ground_truth)
    return x, trace


# ---------------------------------------------------------------------------
# step counts
# ---------------------------------------------------------------------------


def step_count_expectation(n: int, k: int) -> Fraction:
    """Mean restoration steps of a k-order model over all composites of n
    equally likely isolated degradations (highest-order bases first)."""
    return ir(n, k)


def simulate_mean_steps(n: int, k: int, size: int = 64, seed: int = 0,
                        check_exact: bool = True) -> Fraction:
    """Run the chain with oracle restorers and the oracle discriminator on
    every non-empty composite of ``n`` isolated degradations and return the
    exact mean number of restoration steps."""
    if not 1 <= k <= n <= len(SIMULATION_SYMBOLS):
        raise ValueError(f"need 1 <= k <= n <= {len(SIMULATION_SYMBOLS)}")
    symbols = SIMULATION_SYMBOLS[:n]
    registry = RestorerRegistry(enumerate_bases(symbols, k), "oracle")
    dd = OracleDD(registry)
    clean = gen_clean(seed, size, size)
    total = 0
    count = 0
    for t in range(1, n + 1):
        for combo in itertools.combinations(symbols, t):
            degraded, record = synthesize(clean, Label(combo), master_seed=seed + count)
            out, trace = run_cor(degraded, registry, dd, CoRConfig(), context=record)
            if trace.termination != CLEAN_DETECTED:
                raise RuntimeError(f"{combo}: chain ended with {trace.termination}")
            if check_exact and np.max(np.abs(out - clean)) > 1e-9:
                raise RuntimeError(f"{combo}: oracle chain is not exact")
            total += trace.n_restorations
            count += 1
    return Fraction(total, count)
