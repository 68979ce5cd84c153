"""Evaluation tables, ablations and the coupling demonstration.

Everything here works on in-memory cases so the same code drives the CLI
(which reads datasets from disk) and the test-suite (which synthesizes
small batches on the fly).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .algebra import BasisSet, Label, as_label
from .cor import CoRConfig, OracleDD, RandomDD, TrainedDD, run_cor
from .discriminator import ClassifierModel, MarginConfig, TrainHyper, make_training_set, train
from .imaging import INF, psnr, quantize, ssim
from .restorers import RestorerRegistry, coupling_gap, oracle_remove
from .synthesis import (
    UIRD12,
    Component,
    HazeParams,
    NoiseParams,
    SynthesisConfig,
    SynthesisRecord,
    _stream,
    apply_components,
    gen_clean,
    regenerate,
    synthesize,
)

CLEAN_CATEGORY = "clean"

# the 1-order bases of the UIRD-style benchmark
UIRD_BASES = ["noise15", "noise25", "noise50", "rain", "haze"]

# discriminator ablation: a 2-order model on low+haze+snow
MARGIN_TARGET = "low+haze+snow"
MARGIN_SYMBOLS = ["low", "haze", "snow"]
MARGIN_SETTINGS = ["a", "b", "c", "d", "e"]

# basis-set ablation on low+haze+rain
BASIS_TARGET = "low+haze+rain"
BASIS_SETTINGS = {
    "a": ["rain", "haze", "haze+rain"],
    "b": ["haze+rain", "low+haze"],
    "c": ["low", "rain", "haze"],
    "d": ["low", "rain", "haze", "haze+rain", "low+haze"],
}

EVAL_COLUMNS = ["category", "n", "psnr_input", "ssim_input", "psnr_single_pass", "psnr_cor",
                "ssim_cor", "mean_steps"]
MARGIN_COLUMNS = ["setting", "classifier", "epsilon_o", "epsilon_b", "psnr", "ssim", "mean_steps"]
BASIS_COLUMNS = ["setting", "bases", "psnr", "ssim", "mean_steps"]


@dataclass
class Case:
    category: str
    index: int
    clean: np.ndarray
    degraded: np.ndarray
    record: SynthesisRecord


def composite_categories() -> list[str]:
    return [c for c in UIRD12 if as_label(c).order > 1]


def _category(name) -> str:
    return CLEAN_CATEGORY if str(name) == CLEAN_CATEGORY else as_label(name).name


def make_cases(categories: Iterable, per_category: int, seed: int = 0, size=(256, 256),
               config: SynthesisConfig | None = None, quantized: bool = True) -> list[Case]:
    """Synthesize cases exactly as :func:`build_dataset` would write them.

    Clean sources are quantized.  ``quantized=False`` keeps the degraded
    image unrounded, which the oracle restorers can invert exactly.
    """
    cleans = [quantize(gen_clean(int(_stream(seed, "clean-source", i).integers(0, 2**62)), *size))
              for i in range(per_category)]
    cases = []
    for cat in categories:
        name = _category(cat)
        for i, clean in enumerate(cleans):
            if name == CLEAN_CATEGORY:
                cases.append(Case(name, i, clean, clean.copy(), SynthesisRecord(None, [])))
                continue
            master = int(_stream(seed, "entry", name, i).integers(0, 2**62))
            degraded, record = synthesize(clean, as_label(cat), config, master)
            if quantized:
                degraded = quantize(degraded)
            cases.append(Case(name, i, clean, degraded, record))
    return cases


def cases_from_manifest(manifest: dict, categories=None, quantized: bool = True) -> list[Case]:
    """Cases for a dataset on disk (see :func:`load_manifest`).

    ``quantized=True`` reads the degraded PNGs; otherwise the degraded
    images are regenerated from their records without rounding.  Asking
    for the ``"clean"`` category yields each clean source once.
    """
    from .imaging import load_png

    wanted = None if categories is None else {_category(c) for c in categories}
    root = Path(manifest["root"])
    cases = []
    clean_seen: set[str] = set()
    per_category: dict[str, int] = {}
    for entry in manifest["entries"]:
        name = as_label(entry["label"]).name
        if wanted is not None and CLEAN_CATEGORY in wanted and entry["clean"] not in clean_seen:
            clean_seen.add(entry["clean"])
            clean = load_png(root / entry["clean"])
            cases.append(Case(CLEAN_CATEGORY, len(clean_seen) - 1, clean, clean.copy(),
                              SynthesisRecord(None, [])))
        if wanted is not None and name not in wanted:
            continue
        index = per_category.get(name, 0)
        per_category[name] = index + 1
        record = entry.get("record_obj") or SynthesisRecord.from_dict(entry["record"])
        if quantized:
            clean, degraded = load_png(root / entry["clean"]), load_png(root / entry["degraded"])
        else:
            clean, degraded = regenerate(manifest, entry)
        cases.append(Case(name, index, clean, degraded, record))
    return cases


def train_dd(bases, seed: int = 0, n_images: int = 30, patches_per_image: int = 4,
             hyper: TrainHyper | None = None, blind: bool = False):
    """Train a discriminator for ``bases`` on freshly synthesized patches."""
    samples, classes = make_training_set(list(bases), n_images, patches_per_image, seed=seed, blind=blind)
    return train(samples, classes, hyper or TrainHyper(seed=seed))


def make_dd(source: str, registry: RestorerRegistry, model: ClassifierModel | None = None,
            margins: MarginConfig | None = None, mode: str = "non_blind", seed: int = 0):
    if source == "oracle":
        return OracleDD(registry, mode)
    if source == "trained":
        if model is None:
            raise ValueError("a trained discriminator needs a model")
        return TrainedDD(model, margins or MarginConfig.zero(), mode, seed=seed)
    raise ValueError(f"unknown discriminator source {source!r}")


def run_case(case: Case, registry: RestorerRegistry, dd, config: CoRConfig | None = None,
             on_step: Callable | None = None):
    """Run the chain on one case; returns ``(output, trace)``."""
    return run_cor(case.degraded, registry, dd, config, context=case.record,
                   ground_truth=case.clean, on_step=on_step)


def _single_pass(case: Case, registry: RestorerRegistry, basis) -> np.ndarray:
    try:
        return registry.restore(case.degraded, basis, case.record)
    except ValueError:
        # the oracle cannot remove a basis that is not there
        return case.degraded


def _mean(values) -> float:
    values = list(values)
    if any(v == INF for v in values):
        return INF
    return float(np.mean(values)) if values else float("nan")


def evaluate(cases: list[Case], registry: RestorerRegistry, dd, config: CoRConfig | None = None,
             single_pass: bool = True) -> list[dict]:
    """Per-category and mean PSNR/SSIM with and without the chain.

    ``psnr_single_pass`` is the best single registered restorer for the
    category (the best mean over bases, each applied once).
    """
    by_cat: dict[str, list] = {}
    for case in cases:
        out, trace = run_case(case, registry, dd, config)
        row = {
            "psnr_input": psnr(case.degraded, case.clean),
            "ssim_input": ssim(case.degraded, case.clean),
            "psnr_cor": trace.final_psnr,
            "ssim_cor": trace.final_ssim,
            "steps": trace.n_restorations,
            "single": {},
        }
        if single_pass:
            for b in registry.bases:
                row["single"][b] = psnr(_single_pass(case, registry, b), case.clean)
        by_cat.setdefault(case.category, []).append(row)

    table = []
    for cat, rows in by_cat.items():
        best = float("nan")
        if single_pass:
            best = max(_mean(r["single"][b] for r in rows) for b in registry.bases)
        table.append({
            "category": cat,
            "n": len(rows),
            "psnr_input": _mean(r["psnr_input"] for r in rows),
            "ssim_input": _mean(r["ssim_input"] for r in rows),
            "psnr_single_pass": best,
            "psnr_cor": _mean(r["psnr_cor"] for r in rows),
            "ssim_cor": _mean(r["ssim_cor"] for r in rows),
            "mean_steps": float(np.mean([r["steps"] for r in rows])),
        })
    mean_row = {"category": "mean", "n": sum(r["n"] for r in table)}
    for col in EVAL_COLUMNS[2:]:
        mean_row[col] = _mean(r[col] for r in table)
    return table + [mean_row]


def margin_configs(bases) -> dict[str, MarginConfig | None]:
    """Discriminator settings (a)-(e): random, classifier only, + order
    margin, + basis margin, both."""
    full = MarginConfig.defaults(bases)
    return {
        "a": None,
        "b": MarginConfig.zero(),
        "c": MarginConfig(full.epsilon_o, {}),
        "d": MarginConfig(0.0, full.epsilon_b),
        "e": full,
    }


def _summarize(outputs) -> dict:
    return {
        "psnr": _mean(p for p, _, _ in outputs),
        "ssim": _mean(s for _, s, _ in outputs),
        "mean_steps": float(np.mean([n for _, _, n in outputs])),
    }


def _run_all(cases, registry, dd_for, config_for):
    outputs = []
    for case in cases:
        _, trace = run_case(case, registry, dd_for(case), config_for())
        outputs.append((trace.final_psnr, trace.final_ssim, trace.n_restorations))
    return outputs


def margin_ablation(cases: list[Case], registry: RestorerRegistry, model: ClassifierModel,
                    seed: int = 0, settings=MARGIN_SETTINGS) -> list[dict]:
    configs = margin_configs(registry.bases)
    rows = []
    for key in settings:
        margins = configs[key]
        if margins is None:
            dd_for = lambda case, key=key: RandomDD(list(registry.bases), seed=hash_seed(seed, key, case.index))
            margins = MarginConfig.zero()
        else:
            dd_for = lambda case, m=margins: TrainedDD(model, m, seed=seed)
        outputs = _run_all(cases, registry, dd_for, lambda m=margins: CoRConfig(margins=m))
        rows.append({
            "setting": key,
            "classifier": configs[key] is not None,
            "epsilon_o": margins.epsilon_o,
            "epsilon_b": ";".join(f"{k}={v}" for k, v in sorted((str(k), v) for k, v in margins.epsilon_b.items())),
            **_summarize(outputs),
        })
    return rows


def basis_ablation(cases: list[Case], mode: str = "oracle", settings: dict | None = None,
                   seed: int = 0, train_images: int = 30) -> list[dict]:
    """One trained discriminator and registry per basis set."""
    settings = settings or BASIS_SETTINGS
    rows = []
    for key, bases in settings.items():
        registry = RestorerRegistry(BasisSet(bases), mode, absent="skip")
        model, _ = train_dd(list(registry.bases), seed=seed, n_images=train_images)
        margins = MarginConfig.defaults(registry.bases)
        dd = TrainedDD(model, margins, seed=seed)
        outputs = _run_all(cases, registry, lambda case: dd, lambda: CoRConfig(margins=margins))
        rows.append({"setting": key, "bases": ";".join(str(b) for b in registry.bases), **_summarize(outputs)})
    return rows


def hash_seed(*keys) -> int:
    return int(_stream(0, *[str(k) for k in keys]).integers(0, 2**62))


# ---------------------------------------------------------------------------
# degradation coupling
# ---------------------------------------------------------------------------


def _remove_sequence(img, record: SynthesisRecord, order: list[str]):
    for symbol in order:
        img, record = oracle_remove(img, Label((symbol,)), record)
    return img, record


def coupling_demo(seed: int = 0, size: int = 256, sigma: float = 25.0,
                  ts=(0.8, 0.5, 0.3)) -> dict:
    """Oracle experiments showing that removal order matters.

    * ``low+haze+snow``: removing low first, then the rest outermost-first,
      against the plain outermost-first schedule (quantized input).
    * ``haze+noise``: inverting haze before the noise rescales the noise by
      1/t; the measured residual std is compared with (sigma/255)/t and the
      coupling gap is reported for several t.
    """
    clean = quantize(gen_clean(seed, size, size))
    degraded, record = synthesize(clean, as_label("low+haze+snow"), master_seed=seed)
    degraded = quantize(degraded)
    good, _ = _remove_sequence(degraded, record, ["snow", "haze", "low"])
    bad, _ = _remove_sequence(degraded, record, ["low", "snow", "haze"])
    after_low, rec_low = oracle_remove(degraded, "low", record)
    after_snow, rec_snow = oracle_remove(degraded, "snow", record)
    low_first_gap = coupling_gap(clean, rec_low, after_low, "haze+snow")
    snow_first_gap = coupling_gap(clean, rec_snow, after_snow, "low+haze")

    name = f"noise{int(sigma)}" if f"noise{int(sigma)}" in ("noise15", "noise25", "noise50") else "noise25"
    gaps, ratios = {}, {}
    for t in ts:
        comps = [Component("haze", HazeParams(airlight=0.9, t=t)),
                 Component(name, NoiseParams(sigma=sigma, seed=hash_seed(seed, "demo-noise")))]
        rec = SynthesisRecord(None, comps)
        img = apply_components(clean, comps)
        after, rest = oracle_remove(img, "haze", rec)
        gaps[t] = coupling_gap(clean, rest, after, name)
        residual = after - clean
        ratios[t] = float(np.std(residual)) / ((sigma / 255.0) / t)
    return {
        "psnr_outermost_first": psnr(good, clean),
        "psnr_low_first": psnr(bad, clean),
        "gap_low_first": low_first_gap,
        "gap_snow_first": snow_first_gap,
        "haze_first_gap": gaps,
        "noise_std_ratio": ratios,
    }


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.6f}"
    return v


def write_csv(rows: list[dict], path, columns: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in columns})
    return path


def format_table(rows: list[dict], columns: list[str]) -> str:
    cells = [[str(_fmt(r.get(c))) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
