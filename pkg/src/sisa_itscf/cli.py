"""Command-line entry point: ``python -m sisa_itscf <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import bench, gradcheck
from .checkpoint import CheckpointStore
from .conditions import FaultCondition
from .config import ExperimentConfig, get_profile, load_config
from .lstm import ModelConfig
from .pipeline import assemble, build_dataset, load_dataset, write_dataset
from .plan import plan_shards
from .sisa import ConstituentModel, fingerprint, unlearn

log = logging.getLogger("sisa_itscf")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=("desk", "paper"), default="desk", help="base settings (default: desk)")
    p.add_argument("--config", help="key=value file applied on top of the profile")
    p.add_argument("--seed", type=int, help="training seed root")
    p.add_argument("--shards", help="shard count, or a comma list for sweep")
    p.add_argument("--slices", type=int, help="slices per shard (must equal 48/(6*S))")
    p.add_argument("--out", help="output directory")
    p.add_argument("--deterministic", action="store_true", help="force single-worker training")
    p.add_argument("--workers", type=int, help="shard training threads")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sisa-itscf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the 48 clean recordings and a manifest")
    _common(p)
    p.add_argument("--data-seed", type=int)

    p = sub.add_parser("poison", help="apply EMI to named conditions of a dataset")
    _common(p)
    p.add_argument("--data", required=True, help="dataset directory written by synth")
    p.add_argument("--conditions", help="e.g. LA1 or HA1,LB1 (default: config 'poisoned')")

    for name, help_ in (
        ("train", "train case 1 (S=1) or case 2 (S>1) and keep checkpoints"),
        ("retrain", "case 3: single model retrained without the poisoned conditions"),
        ("unlearn", "case 4: unlearn conditions from the checkpoints written by train"),
    ):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--data", help="dataset directory (default: generate from the config)")
        if name != "train":
            p.add_argument("--conditions", help="conditions to remove (default: the poisoned ones)")

    p = sub.add_parser("sweep", help="cases 1-4 for every shard count, with timing")
    _common(p)
    p.add_argument("--repeats", type=int, help="timed repetitions (median is reported)")

    p = sub.add_parser("gradcheck", help="finite-difference check of the LSTM gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dropout", type=float, default=0.0, help="dropout rate with frozen masks")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = get_profile(args.profile)
    if args.config:
        cfg = load_config(args.config, cfg)
    over: dict[str, object] = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.shards:
        over["shards"] = args.shards
    if args.slices is not None:
        over["slices"] = args.slices
    if args.out:
        over["out"] = args.out
    if args.workers is not None:
        over["workers"] = args.workers
    if args.deterministic:
        over["workers"] = 1
    if getattr(args, "repeats", None) is not None:
        over["repeats"] = args.repeats
    if getattr(args, "data_seed", None) is not None:
        over["data_seed"] = args.data_seed
    if getattr(args, "conditions", None):
        over["poisoned"] = args.conditions
    return cfg.with_overrides(**over) if over else cfg


def _single_shards(cfg: ExperimentConfig) -> int:
    if len(cfg.shards) != 1:
        raise SystemExit("this command takes one shard count, e.g. --shards 2")
    return cfg.shards[0]


def _dataset(args, cfg):
    return load_dataset(args.data) if args.data else build_dataset(cfg)


def _state_path(out: Path, shards: int) -> Path:
    return out / "checkpoints" / f"S{shards}" / "state.json"


def cmd_synth(args, cfg) -> int:
    ds = build_dataset(cfg, poisoned=())
    path = write_dataset(ds, cfg.out, cfg.data_seed)
    print(f"wrote 48 recordings and {path}")
    return 0


def cmd_poison(args, cfg) -> int:
    src = load_dataset(args.data)
    poisoned = set(src.poisoned) | set(cfg.poisoned)
    ds = assemble(src.clean, poisoned, cfg.emi, src.window_len, src.stride, src.split_seed)
    path = write_dataset(ds, cfg.out)
    names = ",".join(str(FaultCondition.from_id(c)) for c in ds.poisoned)
    print(f"poisoned {names}; wrote {path}")
    return 0


def cmd_train(args, cfg) -> int:
    shards = _single_shards(cfg)
    out = Path(cfg.out)
    exp = bench.Experiment(cfg, _dataset(args, cfg), store_root=out / "checkpoints")
    case = 1 if shards == 1 else 2
    rep = exp.run_case(case, shards)
    state = {
        "shards": shards,
        "slices": exp.plan(shards).slices_per_shard,
        "seed": cfg.seed,
        "model": asdict(cfg.model),
        "removed": [],
    }
    _state_path(out, shards).write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")
    bench.emit_reports([rep], out, cfg)
    _print_report(rep)
    return 0


def cmd_retrain(args, cfg) -> int:
    exp = bench.Experiment(cfg, _dataset(args, cfg))
    removed = cfg.poisoned if args.conditions else exp.poisoned
    if not removed:
        raise SystemExit("nothing to remove: dataset has no poisoned conditions and --conditions is empty")
    exp.ds = _with_poisoned(exp.ds, removed)
    rep = exp.run_case(3, repeats=cfg.repeats if cfg.repeats > 1 else 1)
    bench.emit_reports([rep], cfg.out, cfg)
    _print_report(rep)
    return 0


def cmd_unlearn(args, cfg) -> int:
    shards = _single_shards(cfg)
    out = Path(cfg.out)
    state_file = _state_path(out, shards)
    if not state_file.exists():
        raise SystemExit(f"missing checkpoints: {state_file} not found; run 'train --shards {shards} --out {out}' first")
    state = json.loads(state_file.read_text())
    ds = _dataset(args, cfg)
    removed = cfg.poisoned if args.conditions else ds.poisoned
    if not removed:
        raise SystemExit("nothing to unlearn: no poisoned conditions given")
    plan = plan_shards(shards, state["slices"], cfg.strategy)
    model_cfg = ModelConfig(**state["model"])
    store = CheckpointStore(state_file.parent)
    already = set(state["removed"])
    models = {}
    for s in range(shards):
        last = store.load(s, plan.slices_per_shard)
        if last is None:
            raise SystemExit(f"missing checkpoints: {store.path(s, plan.slices_per_shard)} absent or corrupt")
        models[s] = ConstituentModel(s, last.params, model_cfg, fingerprint(ds.split.train, plan, s, already))
    result = unlearn(removed, models, store, ds.split.train, plan, model_cfg, cfg.train, state["seed"], store=store)
    state["removed"] = sorted(already | set(removed))
    state_file.write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")
    cm = bench.evaluate(result.models, ds.split.test, state["removed"])
    r = result.report
    rep = bench.CaseReport(
        4, shards, cm, models=shards, seconds=r.total_seconds, shards_retrained=r.shards_retrained,
        stages_executed=sum(len(x.stages) for x in r.runs.values()), stage_epochs=r.stage_epochs,
        excluded=tuple(state["removed"]),
    )
    bench.emit_reports([rep], out, cfg, extra={"fallback_shards": r.fallbacks, "affected": r.affected})
    _print_report(rep)
    if r.fallbacks:
        print(f"warning: shards {r.fallbacks} had no usable checkpoint and were retrained from scratch")
    return 0


def cmd_sweep(args, cfg) -> int:
    exp = bench.Experiment(cfg)
    rows = bench.run_sweep(cfg, exp)
    reports, speedups = bench.sweep_reports(rows)
    extra = {"sweep": [
        {
            "shards": r.shards, "speedup": r.speedup, "time_ratio": r.time_ratio,
            "retrain_seconds": r.retrain_seconds, "unlearn_seconds": r.unlearn_seconds,
            "unlearn_stage_epochs": r.unlearn_stage_epochs, "full_stage_epochs": r.full_stage_epochs,
        }
        for r in rows
    ]}
    bench.emit_reports(reports, cfg.out, cfg, speedups, extra)
    print(f"{'S':>2} {'acc1':>7} {'acc2':>7} {'acc3':>7} {'acc4':>7} {'t3[s]':>7} {'t4[s]':>7} {'speedup':>7}")
    for r in rows:
        acc = [r.reports[c].accuracy if c in r.reports else float("nan") for c in bench.CASES]
        print(f"{r.shards:>2} " + " ".join(f"{a:7.4f}" for a in acc)
              + f" {r.retrain_seconds:7.1f} {r.unlearn_seconds:7.1f} {r.speedup:7.2f}")
    print(f"reports in {cfg.out}")
    return 0


def cmd_gradcheck(args) -> int:
    mc = gradcheck.TINY_CONFIG
    if args.dropout:
        mc = replace(mc, dropout_rate=args.dropout)
    res = gradcheck.grad_check(mc, seed=args.seed)
    for name, err in res.per_param.items():
        print(f"{name:12s} {err:.3e}")
    status = "PASS" if res.max_rel_error < 1e-4 else "FAIL"
    print(f"max relative error {res.max_rel_error:.3e} over {res.num_checked} entries: {status}")
    return 0 if status == "PASS" else 1


def _with_poisoned(ds, removed):
    return replace(ds, poisoned=tuple(sorted(removed)))


def _print_report(rep: bench.CaseReport) -> None:
    recall = " ".join(f"{n}={r:.3f}" for n, r in zip(bench.CLASS_NAMES, rep.recall))
    print(f"case {rep.case} S={rep.shards}: accuracy {rep.accuracy:.4f} ({rep.test_size} windows), "
          f"{rep.seconds:.1f}s; recall {recall}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gradcheck":
        return cmd_gradcheck(args)
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    handlers = {
        "synth": cmd_synth, "poison": cmd_poison, "train": cmd_train,
        "retrain": cmd_retrain, "unlearn": cmd_unlearn, "sweep": cmd_sweep,
    }
    try:
        return handlers[args.command](args, cfg)
    except (bench.MissingCheckpointsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
