"""Command-line entry point: ``masksel <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import budget as budget_mod
from . import pipeline
from .selection import select_by_beta, select_random
from .simulator import SyntheticDataset, WorldConfig, generate_dataset


class InputFileError(Exception):
    pass


class UsageError(Exception):
    pass


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise InputFileError(f"input file not found: {path}")
    return p.read_text()


def read_scores(path: str) -> dict:
    """``image_id,iou_score`` CSV with a header row."""
    rows = csv.DictReader(_read_text(path).splitlines())
    if rows.fieldnames is None or not {"image_id", "iou_score"} <= set(rows.fieldnames):
        raise ValueError(f"{path}: expected columns image_id, iou_score")
    scores = {}
    for row in rows:
        image_id = row["image_id"]
        scores[int(image_id) if image_id.lstrip("-").isdigit() else image_id] = float(row["iou_score"])
    return scores


def scores_csv(scores: dict) -> str:
    lines = ["image_id,iou_score"]
    lines += [f"{k},{scores[k]:.6f}" for k in sorted(scores)]
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _load_config(args) -> pipeline.ExperimentConfig:
    if args.config:
        _read_text(args.config)
        config = pipeline.ExperimentConfig.from_json_file(args.config)
    else:
        config = pipeline.default_config()
    overrides = {}
    for name in ("n_total", "beta", "strategy", "score_source", "num_seeds", "weak_fraction"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return replace(config, **overrides) if overrides else config


# --------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> int:
    if args.config:
        world = WorldConfig.from_dict(json.loads(_read_text(args.config)))
    else:
        world = WorldConfig()
    changes = {"seed": args.seed}
    for name in ("num_images", "height", "width", "num_classes", "mean_objects"):
        value = getattr(args, name)
        if value is not None:
            changes[name] = value
    world = replace(world, **changes)
    dataset = generate_dataset(world)
    out = Path(args.out)
    _write(out, dataset.to_json())
    _write(out.with_suffix(".stats.csv"), dataset.stats_csv())
    return 0


def cmd_budget(args) -> int:
    model = budget_mod.BudgetModel(args.t_il, args.t_ilc, args.t_full, args.t_bb)
    plan = budget_mod.CampaignPlan(args.strong, args.pool, args.weak)
    seconds = budget_mod.campaign_cost(model, plan, args.strategy)
    days = budget_mod.seconds_to_days(seconds)
    print("strategy,n_strong,pool,n_weak,seconds,days")
    print(f"{args.strategy},{plan.n_strong},{plan.selection_pool},{plan.n_weak},{seconds:.2f},{days:.2f}")
    return 0


def cmd_select(args) -> int:
    scores = read_scores(args.scores)
    if args.strategy == "random":
        if args.seed is None:
            raise UsageError("--seed is required for random selection")
        ids = select_random(list(scores), args.n_prime, args.seed)
    else:
        ids = select_by_beta(scores, args.beta, args.n_prime)
    sys.stdout.write("".join(f"{i}\n" for i in ids))
    return 0


def _write_run_outputs(out: Path, reports: list[pipeline.ExperimentReport]):
    _write(out / "report.csv", pipeline.report_csv(reports))
    entries = []
    for report in reports:
        entries.extend(pipeline.report_analysis(report))
    _write(out / "analysis.csv", pipeline.analysis_csv(entries))


def cmd_run(args) -> int:
    config = _load_config(args)
    report = pipeline.run_experiment(config, args.seed)
    out = Path(args.out)
    _write_run_outputs(out, [report])
    for k in range(config.num_seeds):
        pool = pipeline.scored_pool(config, pipeline.derive_seed(args.seed, "run", k))
        scores = pool.oracle if config.score_source == "oracle" else pool.predicted
        _write(out / "scores" / f"seed_{k}.csv", scores_csv(scores))
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    betas = pipeline.beta_grid(args.betas)
    reports = pipeline.run_sweep(config, betas, args.seed, include_random=not args.no_random)
    _write_run_outputs(Path(args.out), reports)
    return 0


def cmd_analyze(args) -> int:
    dataset = SyntheticDataset.from_json(_read_text(args.dataset))
    scores = read_scores(args.scores)
    unknown = set(scores) - set(dataset.ids)
    if unknown:
        raise ValueError(f"{len(unknown)} scored images are not in the dataset")
    betas = pipeline.beta_grid(args.betas)
    selections = {f"{b:.2f}": select_by_beta(scores, b, args.n_prime) for b in betas}
    rows = pipeline.analyze_selection(dataset, selections)
    text = pipeline.analysis_csv([("", row) for row in rows])
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------

def _experiment_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="experiment config JSON (default: packaged default world)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-total", dest="n_total", type=int)
    p.add_argument("--score-source", dest="score_source", choices=("oracle", "predicted"))
    p.add_argument("--num-seeds", dest="num_seeds", type=int)
    p.add_argument("--weak-fraction", dest="weak_fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="masksel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="dataset JSON path; stats go next to it")
    p.add_argument("--config", help="world config JSON")
    p.add_argument("--num-images", dest="num_images", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.add_argument("--mean-objects", dest="mean_objects", type=float)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("budget", help="annotation budget of a campaign")
    p.add_argument("--strategy", choices=("random", "mask_guided"), required=True)
    p.add_argument("--strong", type=int, required=True)
    p.add_argument("--pool", type=int, default=0)
    p.add_argument("--weak", type=int, default=0)
    defaults = budget_mod.BudgetModel()
    p.add_argument("--t-il", dest="t_il", type=float, default=defaults.t_il)
    p.add_argument("--t-ilc", dest="t_ilc", type=float, default=defaults.t_ilc)
    p.add_argument("--t-full", dest="t_full", type=float, default=defaults.t_full)
    p.add_argument("--t-bb", dest="t_bb", type=float, default=defaults.t_bb)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("select", help="select images from a scores CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--strategy", choices=("beta_proximity", "random"), default="beta_proximity")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--n-prime", dest="n_prime", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("run", help="run one experiment configuration")
    _experiment_flags(p)
    p.add_argument("--beta", type=float)
    p.add_argument("--strategy", choices=("beta_proximity", "random"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a beta sweep plus the random baseline")
    _experiment_flags(p)
    p.add_argument("--betas", default="0.0:1.0:0.1", help="start:stop:step, inclusive")
    p.add_argument("--no-random", action="store_true", help="skip the random-selection baseline")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="object statistics of beta selections")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--betas", default="0.0:1.0:0.1")
    p.add_argument("--n-prime", dest="n_prime", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputFileError as exc:
        print(f"masksel: error: {exc}", file=sys.stderr)
        return 1
    except UsageError as exc:
        parser.error(str(exc))
    except ValueError as exc:
        print(f"masksel: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
