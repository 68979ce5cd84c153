"""Command-line harness: synth | train-dd | run | eval | ablate | complexity.

Every command writes a ``run_config.json`` snapshot next to its outputs so
the run can be repeated exactly.  CSV files are the normative outputs;
tables printed to stdout are a convenience.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .algebra import enumerate_bases
from .complexity import emit_curves
from .cor import run_cor
from .config import RunConfig
from .discriminator import ClassifierModel, accuracy, make_training_set, train
from .experiments import (
    BASIS_COLUMNS,
    BASIS_TARGET,
    EVAL_COLUMNS,
    MARGIN_COLUMNS,
    MARGIN_SYMBOLS,
    MARGIN_TARGET,
    basis_ablation,
    cases_from_manifest,
    coupling_demo,
    evaluate,
    format_table,
    hash_seed,
    make_cases,
    make_dd,
    margin_ablation,
    train_dd,
    write_csv,
)
from .imaging import load_png, save_png
from .restorers import RestorerRegistry
from .synthesis import build_dataset, load_manifest


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    data = cfg.to_dict()
    if args.seed is not None:
        data["seed"] = args.seed
    if args.mode is not None:
        data["registry"]["mode"] = args.mode
        data["ablate"]["mode"] = args.mode
    if args.dd is not None:
        data["cor"]["discriminator_source"] = args.dd
    if args.categories is not None:
        cats = [c.strip() for c in args.categories.split(",") if c.strip()]
        data["dataset"]["categories"] = cats
        data["eval"]["categories"] = cats
    if getattr(args, "model", None):
        data["discriminator"]["model"] = args.model
    if getattr(args, "n", None) is not None:
        data["complexity"]["n"] = args.n
    if args.config is None or "margins" not in json.loads(Path(args.config).read_text()):
        # margins follow the (possibly overridden) registry bases
        data["margins"] = None
    return RunConfig.from_dict(data)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest_path(args, cfg: RunConfig) -> Path:
    return Path(args.manifest) if args.manifest else Path(cfg.dataset.root) / "manifest.json"


def _load_model(cfg: RunConfig) -> ClassifierModel:
    path = cfg.discriminator.model
    if not path:
        raise UsageError("the trained discriminator needs a model: run train-dd and pass --model")
    return ClassifierModel.load(path)


def _dd_for(cfg: RunConfig, registry: RestorerRegistry, model: ClassifierModel | None = None):
    cor = cfg.cor_config()
    if cor.discriminator_source == "trained" and model is None:
        model = _load_model(cfg)
    return make_dd(cor.discriminator_source, registry, model, cor.margins, cor.mode, seed=cfg.seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    root = Path(args.out) if args.out_given else Path(cfg.dataset.root)
    ds = cfg.dataset
    # clean sources are always written, so "clean" needs no category of its own
    categories = [c for c in ds.category_list() if c != "clean"]
    manifest = build_dataset(root, categories, ds.per_category, cfg.seed, tuple(ds.size),
                             ds.synthesis_config(), ds.clean_dir)
    cfg.save(root / "run_config.json")
    n = len(json.loads(manifest.read_text())["entries"])
    print(f"wrote {n} degraded images in {len(categories)} categories to {root}")
    return 0


def cmd_train_dd(cfg: RunConfig, args) -> int:
    out = _out(args)
    d = cfg.discriminator
    blind = cfg.cor_config().mode == "blind"
    bases = list(cfg.make_registry().bases)
    samples, classes = make_training_set(bases, d.train_images, d.patches_per_image, seed=cfg.seed,
                                         patch_size=d.patch_size, blind=blind)
    heldout, _ = make_training_set(bases, d.heldout_images, d.patches_per_image,
                                   seed=hash_seed(cfg.seed, "heldout"), patch_size=d.patch_size, blind=blind)
    model, losses = train(samples, classes, d.hyper(cfg.seed))
    model.save(out / "dd_model.json")
    with open(out / "dd_train_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(losses, 1):
            w.writerow([i, repr(float(loss))])
    cfg.discriminator.model = str(out / "dd_model.json")
    cfg.save(out / "run_config.json")
    acc_train, acc_held = accuracy(model, samples), accuracy(model, heldout)
    print(f"classes: {', '.join(classes)}")
    print(f"train accuracy {acc_train:.4f}  held-out accuracy {acc_held:.4f}")
    return 0


def _find_entry(manifest: dict, path: Path):
    root = Path(manifest["root"]).resolve()
    target = path.resolve()
    for entry in manifest["entries"]:
        if (root / entry["degraded"]).resolve() == target:
            return entry
    return None


def cmd_run(cfg: RunConfig, args) -> int:
    if not args.input:
        raise UsageError("run needs an input PNG or directory")
    src = Path(args.input)
    inputs = sorted(src.glob("*.png")) if src.is_dir() else [src]
    if not inputs:
        raise UsageError(f"no PNG files in {src}")
    registry = cfg.make_registry()
    cor = cfg.cor_config()
    manifest = None
    if registry.mode == "oracle" or cor.discriminator_source == "oracle":
        if not args.manifest:
            raise UsageError("oracle mode needs --manifest to look up the synthesis records")
        manifest = load_manifest(args.manifest)
    dd = _dd_for(cfg, registry)
    out = _out(args)
    for path in inputs:
        img = load_png(path)
        context = clean = None
        if manifest is not None:
            entry = _find_entry(manifest, path)
            if entry is None:
                raise UsageError(f"{path} is not listed in {args.manifest}")
            context = entry["record_obj"]
            clean = load_png(Path(manifest["root"]) / entry["clean"])
        stem = path.stem
        on_step = None
        if args.dump_steps:
            step_dir = out / f"{stem}_steps"
            on_step = lambda i, x, d=step_dir: save_png(x, d / f"step_{i:02d}.png")
        result, trace = run_cor(img, registry, dd, cor, context=context, ground_truth=clean, on_step=on_step)
        save_png(result, out / f"{stem}.png")
        (out / f"{stem}.trace.json").write_text(json.dumps(trace.to_dict(), indent=1) + "\n")
        print(f"{path.name}: {trace.n_restorations} steps ({trace.termination}) "
              f"{' > '.join(trace.chosen)}")
    cfg.save(out / "run_config.json")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    registry = cfg.make_registry()
    cor = cfg.cor_config()
    manifest = load_manifest(_manifest_path(args, cfg))
    cases = cases_from_manifest(manifest, cfg.eval.categories, quantized=registry.mode == "classical")
    if not cases:
        raise UsageError("no dataset entries match the requested categories")
    model = None
    if cor.discriminator_source == "trained":
        if cfg.discriminator.model:
            model = _load_model(cfg)
        else:
            d = cfg.discriminator
            model, _ = train_dd(list(registry.bases), seed=cfg.seed, n_images=d.train_images,
                                patches_per_image=d.patches_per_image, hyper=d.hyper(cfg.seed),
                                blind=cor.mode == "blind")
    dd = _dd_for(cfg, registry, model)
    rows = evaluate(cases, registry, dd, cor, cfg.eval.single_pass)
    out = _out(args)
    write_csv(rows, out / "eval.csv", EVAL_COLUMNS)
    cfg.save(out / "run_config.json")
    print(format_table(rows, EVAL_COLUMNS))
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    a = cfg.ablate
    out = _out(args)
    margin_cases = make_cases([MARGIN_TARGET], a.per_target, seed=cfg.seed)
    margin_bases = enumerate_bases(MARGIN_SYMBOLS, 2)
    registry = RestorerRegistry(margin_bases, a.mode, absent="skip")
    model, _ = train_dd(list(margin_bases), seed=cfg.seed, n_images=a.train_images)
    margin_rows = margin_ablation(margin_cases, registry, model, seed=cfg.seed)
    basis_cases = make_cases([BASIS_TARGET], a.per_target, seed=cfg.seed)
    basis_rows = basis_ablation(basis_cases, a.mode, seed=cfg.seed, train_images=a.train_images)
    coupling = coupling_demo(cfg.seed)

    write_csv(margin_rows, out / "ablation_margins.csv", MARGIN_COLUMNS)
    write_csv(basis_rows, out / "ablation_bases.csv", BASIS_COLUMNS)
    (out / "coupling.json").write_text(json.dumps(coupling, indent=1, default=str) + "\n")
    cfg.save(out / "run_config.json")
    print(f"discriminator settings on {MARGIN_TARGET}:")
    print(format_table(margin_rows, MARGIN_COLUMNS))
    print(f"\nbasis sets on {BASIS_TARGET}:")
    print(format_table(basis_rows, BASIS_COLUMNS))
    return 0


def cmd_complexity(cfg: RunConfig, args) -> int:
    n = cfg.complexity.n
    out = _out(args)
    path = emit_curves(n, out / f"complexity_n{n}.csv")
    cfg.save(out / "run_config.json")
    print(path.read_text(), end="")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train-dd": cmd_train_dd,
    "run": cmd_run,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "complexity": cmd_complexity,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainrestore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run config JSON")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--manifest", help="dataset manifest.json")
        p.add_argument("--dump-steps", action="store_true", help="write every intermediate image")
        p.add_argument("--out", help="output directory")
        p.add_argument("--categories", help="comma-separated degradation labels")
        p.add_argument("--mode", choices=["oracle", "classical"], help="restorer family")
        p.add_argument("--dd", choices=["trained", "oracle"], help="discriminator source")
        p.add_argument("--model", help="trained discriminator JSON")
        if name == "run":
            p.add_argument("input", nargs="?", help="degraded PNG or a directory of PNGs")
        if name == "complexity":
            p.add_argument("--n", type=int, help="number of isolated degradations")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.out_given = args.out is not None
    if args.out is None:
        args.out = "out"
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
