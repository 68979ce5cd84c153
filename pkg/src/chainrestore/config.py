"""Run configuration: one JSON document that pins down a reproducible run.

Unknown keys are rejected at every level.  Example::

    {
      "seed": 0,
      "dataset": {"root": "data/uird-mini", "per_category": 20},
      "registry": {"mode": "classical", "bases": ["noise15", "noise25", "noise50", "rain", "haze"]},
      "margins": {"epsilon_o": 0.03, "epsilon_b": {}},
      "cor": {"max_steps": null, "mode": "non_blind", "discriminator_source": "trained"},
      "discriminator": {"model": null, "train_images": 30},
      "eval": {"categories": null},
      "ablate": {"mode": "oracle", "per_target": 20},
      "complexity": {"n": 20}
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .algebra import BasisSet
from .cor import CoRConfig
from .discriminator import MarginConfig, TrainHyper
from .restorers import RestorerRegistry
from .synthesis import UIRD12, SynthesisConfig

MAX_SEED = 2**64 - 1


def _strict(cls, data: dict | None, where: str):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**data)


@dataclass
class DatasetSection:
    root: str = "data/uird-mini"
    categories: list | None = None  # None: the 12 default categories
    per_category: int = 20
    size: list = field(default_factory=lambda: [256, 256])
    clean_dir: str | None = None
    synthesis: dict = field(default_factory=dict)

    def synthesis_config(self) -> SynthesisConfig:
        return SynthesisConfig.from_dict(self.synthesis)

    def category_list(self) -> list[str]:
        return list(self.categories) if self.categories is not None else list(UIRD12)


@dataclass
class DiscriminatorSection:
    model: str | None = None
    train_images: int = 30
    heldout_images: int = 10
    patches_per_image: int = 4
    patch_size: int = 128
    n_patches: int = 12
    lr: float = 2e-3
    epochs: int = 1000
    batch: int = 64  # 0 means full batch
    optimizer: str = "adam"
    flips: bool = True

    def hyper(self, seed: int) -> TrainHyper:
        return TrainHyper(lr=self.lr, epochs=self.epochs, batch=self.batch, seed=seed,
                          flips=self.flips, optimizer=self.optimizer)


@dataclass
class EvalSection:
    categories: list | None = None
    single_pass: bool = True


@dataclass
class AblateSection:
    mode: str = "oracle"
    per_target: int = 20
    train_images: int = 30


@dataclass
class ComplexitySection:
    n: int = 20


DEFAULT_REGISTRY = {"mode": "classical", "bases": ["noise15", "noise25", "noise50", "rain", "haze"]}


@dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    registry: dict = field(default_factory=lambda: dict(DEFAULT_REGISTRY))
    margins: MarginConfig | None = None  # None: defaults for the registry bases
    cor: dict = field(default_factory=dict)
    discriminator: DiscriminatorSection = field(default_factory=DiscriminatorSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ablate: AblateSection = field(default_factory=AblateSection)
    complexity: ComplexitySection = field(default_factory=ComplexitySection)

    def __post_init__(self):
        if not isinstance(self.seed, int) or not 0 <= self.seed <= MAX_SEED:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        # validate eagerly so a bad file fails before any work is done
        self.make_registry()
        self.cor_config()

    def make_registry(self) -> RestorerRegistry:
        return RestorerRegistry.from_config(self.registry)

    def margin_config(self) -> MarginConfig:
        if self.margins is not None:
            return self.margins
        return MarginConfig.defaults(BasisSet(self.registry["bases"]))

    def cor_config(self) -> CoRConfig:
        if "margins" in self.cor:
            raise ValueError("margins belong at the top level of the run config")
        return CoRConfig.from_dict({**self.cor, "margins": self.margin_config()})

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "dataset": asdict(self.dataset),
            "registry": self.make_registry().to_config(),
            "margins": self.margin_config().to_dict(),
            "cor": {k: v for k, v in self.cor_config().to_dict().items() if k != "margins"},
            "discriminator": asdict(self.discriminator),
            "eval": asdict(self.eval),
            "ablate": asdict(self.ablate),
            "complexity": asdict(self.complexity),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        kw = {}
        if "seed" in data:
            kw["seed"] = data["seed"]
        sections = {"dataset": DatasetSection, "discriminator": DiscriminatorSection,
                    "eval": EvalSection, "ablate": AblateSection, "complexity": ComplexitySection}
        for name, sec in sections.items():
            if name in data:
                kw[name] = _strict(sec, data[name], name)
        if "registry" in data:
            kw["registry"] = dict(data["registry"])
        if data.get("margins") is not None:
            kw["margins"] = MarginConfig.from_dict(data["margins"])
        if "cor" in data:
            kw["cor"] = dict(data["cor"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path
