"""Command-line entry point: ``cecnet {train,eval,ablate,export-relation}``.

Exit codes: 0 success, 2 configuration or I/O problem, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np
from PIL import Image

from . import checkpoint, plotting
from .config import ATTENTIONS, METRICS, RunConfig
from .errors import CECError, CheckpointError, TrainingError
from .harness import (TrainState, evaluate, make_datasets, query_relation_maps, sample_episode,
                      train)
from .localization import inside_outside_means, write_pgm

log = logging.getLogger("cecnet")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

ABLATION_HEADER = ("attn", "metric", "acc", "ci95", "params")
LOSS_GRID_HEADER = ("lambda", "metric_w", "global_w", "rotation_w", "acc", "ci95")
# fixed-weight rows then uncertainty-weighted rows at several lambda
LOSS_GRID = (
    (None, None, None),
    (None, None, 1.0),
    (None, 1.0, None),
    (None, 1.0, 1.0),
    (0.5, "w_G", "w_R"),
    (1.0, "w_G", "w_R"),
    (1.5, "w_G", "w_R"),
    (2.0, "w_G", "w_R"),
)


def _config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.precision is not None:
        changes["precision"] = args.precision
    return config.replace(**changes) if changes else config


def _state_from(args) -> TrainState:
    if not args.checkpoint:
        raise CheckpointError("--checkpoint is required")
    state = checkpoint.load(args.checkpoint)
    if args.precision is not None or args.seed is not None:
        state.config = state.config.replace(**{k: v for k, v in
                                              (("precision", args.precision), ("seed", args.seed))
                                              if v is not None})
    return state


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _train_run(config: RunConfig, metrics_path=None) -> TrainState:
    state = TrainState.create(config)
    base, _ = make_datasets(config)
    return train(state, base, config.train_episodes, metrics_path)


def cmd_train(args) -> int:
    config = _config(args)
    if args.episodes is not None:
        config = config.replace(train_episodes=args.episodes)
    os.makedirs(config.out_dir, exist_ok=True)
    metrics_path = os.path.join(config.out_dir, "metrics.csv")
    if os.path.exists(metrics_path):
        os.remove(metrics_path)
    with open(os.path.join(config.out_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(config.to_json())
    state = TrainState.create(config)
    base, _ = make_datasets(config)
    try:
        train(state, base, config.train_episodes, metrics_path)
    except TrainingError as exc:
        if exc.state is not None:
            checkpoint.save(os.path.join(config.out_dir, "diverged.cec1"), exc.state)
        raise
    ckpt = os.path.join(config.out_dir, "ckpt.cec1")
    checkpoint.save(ckpt, state)
    plotting.loss_curve(metrics_path, os.path.join(config.out_dir, "loss_curve.png"))
    print(f"trained steps={state.step} params={state.model.parameter_count()} checkpoint={ckpt}")
    return EXIT_OK


def _report(label: str, summary, episodes: int) -> str:
    mean, ci = summary
    prefix = f"{label} " if label else ""
    return f"{prefix}acc={_fmt(mean)} ci95={_fmt(ci)} episodes={episodes}"


def cmd_eval(args) -> int:
    state = _state_from(args)
    config = state.config
    episodes = config.eval_episodes if args.episodes is None else args.episodes
    _, novel = make_datasets(config)
    k_shot = config.k_shot if args.shots is None else args.shots
    report = evaluate(state, novel, episodes, config.n_way, k_shot, seed=config.seed,
                      finetune=args.finetune, workers=config.workers)
    if args.finetune:
        print(_report("metric", report.metric, episodes))
        print(_report("combined", report.combined, episodes))
    else:
        print(_report("", report.metric, episodes))
    return EXIT_OK


def _ablation_cell(config: RunConfig, seed_offset: int = 0):
    state = _train_run(config)
    _, novel = make_datasets(config)
    report = evaluate(state, novel, config.eval_episodes, config.n_way, config.k_shot,
                      seed=config.seed + 1000 + seed_offset, workers=config.workers)
    return report.metric, state.model.parameter_count()


def cmd_ablate(args) -> int:
    config = _config(args)
    if args.episodes is not None:
        config = config.replace(train_episodes=args.episodes)
    os.makedirs(config.out_dir, exist_ok=True)
    rows = []
    grid_path = os.path.join(config.out_dir, "ablation.csv")
    with open(grid_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATION_HEADER)
        for attn in ATTENTIONS:
            for metric in METRICS:
                (acc, ci), params = _ablation_cell(config.replace(attention=attn, metric=metric))
                row = {"attn": attn, "metric": metric, "acc": _fmt(acc), "ci95": _fmt(ci), "params": params}
                writer.writerow([row[k] for k in ABLATION_HEADER])
                fh.flush()
                rows.append(row)
                print(",".join(str(row[k]) for k in ABLATION_HEADER), flush=True)
    plotting.ablation_bars(rows, os.path.join(config.out_dir, "ablation.png"))
    if not args.skip_loss_grid:
        loss_path = os.path.join(config.out_dir, "loss_weights.csv")
        with open(loss_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOSS_GRID_HEADER)
            for lam, global_w, rotation_w in LOSS_GRID:
                if lam is None:
                    cell = config.replace(loss_weights={"global": global_w, "rotation": rotation_w})
                else:
                    cell = config.replace(lam=lam, loss_weights="learnable")
                (acc, ci), _ = _ablation_cell(cell)
                writer.writerow(["-" if lam is None else lam, 0.5,
                                 "-" if global_w is None else global_w,
                                 "-" if rotation_w is None else rotation_w, _fmt(acc), _fmt(ci)])
                fh.flush()
    print(f"ablation written to {grid_path}")
    return EXIT_OK


def cmd_export_relation(args) -> int:
    state = _state_from(args)
    config = state.config
    out = args.out or config.out_dir
    os.makedirs(out, exist_ok=True)
    _, novel = make_datasets(config)
    seed = config.seed if args.seed is None else args.seed
    episode = sample_episode(novel, config.n_way, config.k_shot, 1, np.random.default_rng(seed))
    relation = query_relation_maps(state, episode)[0].reshape(5, 5)
    query = episode.queries[0]
    write_pgm(os.path.join(out, "relation.pgm"), relation)
    with open(os.path.join(out, "relation.csv"), "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows([[repr(float(v)) for v in row] for row in relation])
    rgb = np.rint(np.transpose(query.pixels, (1, 2, 0)) * 255).astype(np.uint8)
    Image.fromarray(rgb, "RGB").save(os.path.join(out, "query.png"))
    Image.fromarray(query.object_mask.astype(np.uint8) * 255, "L").save(os.path.join(out, "mask.png"))
    plotting.relation_figure(query.pixels, query.object_mask, relation, os.path.join(out, "relation.png"))
    inside, outside = inside_outside_means(relation, query.object_mask)
    print(f"relation inside={inside:.4f} outside={outside:.4f} out={out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cecnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint_arg=False):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--episodes", type=int)
        p.add_argument("--precision", choices=("f32", "f64"))
        if checkpoint_arg:
            p.add_argument("--checkpoint", required=True, help="path to a ckpt.cec1 file")
        return p

    common(sub.add_parser("train", help="base training")).set_defaults(func=cmd_train)
    ev = common(sub.add_parser("eval", help="few-shot evaluation of a checkpoint"), True)
    ev.add_argument("--finetune", action="store_true", help="also fine-tune per episode and combine")
    ev.add_argument("--shots", type=int, help="override K for evaluation")
    ev.set_defaults(func=cmd_eval)
    ab = common(sub.add_parser("ablate", help="attention x metric grid and loss-weight grid"))
    ab.add_argument("--skip-loss-grid", action="store_true")
    ab.set_defaults(func=cmd_ablate)
    common(sub.add_parser("export-relation", help="relation map images for one query"), True) \
        .set_defaults(func=cmd_export_relation)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.episodes is not None and args.episodes < 0:
        print("error: --episodes must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CECError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
