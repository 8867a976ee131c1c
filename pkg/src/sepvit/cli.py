"""``sepvit`` command line: summary, analyze, train, eval, gen-data."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import analyzer, checkpoint
from .backbone import PRESETS, ModelConfig, SepViT, preset
from .data import generate, load_dataset, save_dataset
from .errors import ConfigError, SepViTError
from .train import evaluate, metrics_csv, train

log = logging.getLogger("sepvit")


@dataclass
class RunConfig:
    subcommand: str
    preset: str | None = None
    config: str | None = None
    seed: int = 0
    epochs: int = 50
    batch: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.05
    warmup_epochs: int = 5
    clip_norm: float | None = None
    data: str | None = None
    synthetic: bool = False
    classes: int = 4
    n: int = 256
    token_mode: str = "learnable"
    out: str | None = None


def load_config_file(path: str) -> tuple[ModelConfig, dict]:
    """Parse a JSON config: ``{"model": {...}}`` or ``{"preset": name, ...}`` plus optional ``"run"``."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    run = doc.get("run", {})
    if "model" in doc:
        try:
            cfg = ModelConfig.from_dict(doc["model"])
        except ConfigError as exc:
            raise ConfigError(f"{path}: field 'model': {exc}") from exc
    elif "preset" in doc:
        extra = {k: doc[k] for k in ("num_classes", "token_mode", "pwa_qk", "max_droppath") if k in doc}
        cfg = preset(doc["preset"], **extra)
    else:
        raise ConfigError(f"{path}: needs a 'model' or 'preset' field")
    unknown = set(run) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) in 'run': {', '.join(sorted(unknown))}")
    return cfg, run


def _model_config(args) -> ModelConfig:
    if args.config:
        cfg, _ = load_config_file(args.config)
    else:
        kwargs = {}
        if getattr(args, "token_mode", None):
            kwargs["token_mode"] = args.token_mode
        if getattr(args, "classes", None) and args.subcommand == "train":
            kwargs["num_classes"] = args.classes
        cfg = preset(args.preset or "micro", **kwargs)
    if getattr(args, "resolution", None):
        cfg = replace(cfg, input_resolution=args.resolution)
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_summary(args) -> int:
    cfg = _model_config(args)
    model = SepViT(cfg)
    rows = []
    for i, (s, side) in enumerate(zip(cfg.stages, cfg.stage_sides()), start=1):
        rows.append([f"stage{i}", side, s.depth, s.channels, s.heads, s.window, s.group, " ".join(s.block_pattern)])
    print(f"model: {cfg.name}  input: {cfg.input_resolution}px  classes: {cfg.num_classes}  tokens: {cfg.token_mode}")
    print(analyzer.format_table(["stage", "side", "depth", "C", "heads", "M", "g", "pattern"], rows))
    params = analyzer.count_params(model)["total"]
    gmacs = analyzer.analytic_model_cost(cfg).analytic_total / 1e9
    print(f"params: {params:,} ({params / 1e6:.2f}M)")
    print(f"analytic GMACs @ {cfg.input_resolution}px: {gmacs:.3f}")
    if args.out:
        header = "stage,side,depth,channels,heads,window,group,pattern\n"
        body = "".join(",".join(str(c) for c in r) + "\n" for r in rows)
        _write(Path(args.out), header + body + f"total_params,{params}\ngmacs,{gmacs:.6f}\n")
    return 0


def cmd_analyze(args) -> int:
    cfg = _model_config(args)
    model = SepViT(cfg)
    report = analyzer.count_macs_empirical(model)
    rows = analyzer.block_comparison(cfg)
    comp_csv = analyzer.comparison_csv(rows, report)
    print(analyzer.format_table(
        ["stage", "H", "C", "M", "N", "SepViT block", "2x window MSA", "ratio"],
        [[r.stage, r.H, r.C, r.M, r.N, f"{r.sepvit_macs:,}", f"{r.two_block_macs:,}", f"{r.ratio:.4f}"] for r in rows],
    ))
    print()
    print(report.to_text())
    out = Path(args.out or "analysis")
    _write(out / "comparison.csv", comp_csv)
    _write(out / "components.csv", report.to_csv())
    bad = [c for c in report.attention_rows() if not c.exact]
    if bad:
        names = ", ".join(f"stage{c.stage}/{c.name}" for c in bad)
        raise SepViTError(f"analytic and empirical attention MACs disagree for {names}")
    print(f"attention rows exact: {len(report.attention_rows())}/{len(report.attention_rows())}")
    return 0


def _dataset(args, resolution: int):
    if args.data and not args.synthetic:
        return load_dataset(args.data)
    return generate(args.seed, args.classes, args.n, resolution)


def cmd_train(args) -> int:
    if args.config:
        _, run = load_config_file(args.config)
        for k, v in run.items():
            if getattr(args, k, None) in (None, RunConfig.__dataclass_fields__[k].default):
                setattr(args, k, v)
    if not args.data and not args.synthetic:
        raise ConfigError("train needs --data DIR or --synthetic")
    cfg = _model_config(args)
    ds = _dataset(args, cfg.input_resolution)
    model = SepViT(cfg, seed=args.seed)
    out = Path(args.out or "run")
    history = train(
        model, ds, args.epochs, args.batch, args.lr, args.seed,
        momentum=args.momentum, weight_decay=args.weight_decay,
        warmup_epochs=args.warmup_epochs, clip_norm=args.clip_norm,
        on_epoch=lambda m: print(f"epoch {m.epoch:3d}  loss {m.loss:.5f}  acc {m.train_acc:.4f}", flush=True),
    )
    checkpoint.save(model, out / "checkpoint")
    _write(out / "metrics.csv", metrics_csv(history))
    print(f"final train accuracy {history[-1].train_acc:.4f}; checkpoint at {out / 'checkpoint'}")
    return 0


def cmd_eval(args) -> int:
    if not Path(args.checkpoint, checkpoint.MANIFEST).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    model = checkpoint.load(args.checkpoint)
    ds = _dataset(args, model.config.input_resolution)
    rep = evaluate(model, ds)
    print(f"top-1 accuracy: {rep.accuracy:.4f}")
    for k, a in enumerate(rep.per_class):
        print(f"  class {k}: {a:.4f}")
    if args.out:
        _write(Path(args.out), rep.to_csv())
    return 0


def cmd_gen_data(args) -> int:
    ds = generate(args.seed, args.classes, args.n, args.resolution or 64)
    path = save_dataset(ds, args.out or "data")
    print(f"wrote {len(ds)} samples, {ds.num_classes} classes, {ds.resolution}px to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sepvit", description="SepViT models, cost analysis and desk-scale training")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def model_args(sp, resolution=True):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
        g.add_argument("--config", help="JSON model/run config file")
        if resolution:
            sp.add_argument("--resolution", type=int)

    sp = sub.add_parser("summary", help="stage table, parameter count and analytic GMACs")
    model_args(sp)
    sp.add_argument("--out", help="CSV output path")
    sp.set_defaults(func=cmd_summary)

    sp = sub.add_parser("analyze", help="per-stage block cost comparison and MAC cross-check")
    model_args(sp)
    sp.add_argument("--out", help="output directory (default: analysis)")
    sp.set_defaults(func=cmd_analyze)

    def data_args(sp):
        sp.add_argument("--data", help="dataset directory written by gen-data")
        sp.add_argument("--synthetic", action="store_true", help="generate the dataset in memory from --seed")
        sp.add_argument("--classes", type=int, default=4)
        sp.add_argument("--n", type=int, default=256)
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("train", help="train on a dataset and write checkpoint + metrics.csv")
    model_args(sp, resolution=False)
    data_args(sp)
    sp.add_argument("--epochs", type=int, default=RunConfig.epochs)
    sp.add_argument("--batch", type=int, default=RunConfig.batch)
    sp.add_argument("--lr", type=float, default=RunConfig.lr)
    sp.add_argument("--momentum", type=float, default=RunConfig.momentum)
    sp.add_argument("--weight-decay", dest="weight_decay", type=float, default=RunConfig.weight_decay)
    sp.add_argument("--warmup-epochs", dest="warmup_epochs", type=int, default=RunConfig.warmup_epochs)
    sp.add_argument("--clip-norm", dest="clip_norm", type=float, help="clip the global gradient norm")
    sp.add_argument("--token-mode", dest="token_mode", choices=["learnable", "fixed-zero"])
    sp.add_argument("--out", help="run directory (default: run)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="accuracy, per-class accuracy and confusion counts")
    sp.add_argument("--checkpoint", required=True)
    data_args(sp)
    sp.add_argument("--out", help="CSV output path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gen-data", help="write a seeded synthetic dataset")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--n", type=int, default=256)
    sp.add_argument("--resolution", type=int, default=64)
    sp.add_argument("--out", help="output directory (default: data)")
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except SepViTError as exc:
        print(f"{exc.category} error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
