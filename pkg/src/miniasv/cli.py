"""Command-line entry point.

Subcommands: gen-data, train, eval, gradcheck, sweep. Exit codes: 0 success,
1 usage error, 2 config/input validation error, 3 runtime error. The
``MINIASV_OUT_ROOT`` environment variable supplies the default output root
when --out is omitted. Outputs carry no timestamps, so identical seeds and
inputs reproduce identical files.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import backend
from .errors import ConfigError, DimensionError, InputError, MiniasvError
from .experiment import echo_config, resolve_config
from .gradcheck import run_suite
from .metrics import cosine_score, read_trials, write_scores
from .model import embed_utterance, load_checkpoint, save_checkpoint
from .report import render_table, result_row, write_report
from .sweep import run_sweep, sweep_base_config
from .synth import generate_dataset, load_dataset, nearest_centroid_accuracy, save_dataset
from .train import evaluate, train

GRAD_TOLERANCE = 1e-6

USAGE_EXIT = 1
VALIDATION_EXIT = 2
RUNTIME_EXIT = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; this CLI reserves 2 for validation."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _out_dir(arg: str | None, default_leaf: str) -> Path:
    if arg:
        return Path(arg)
    root = os.environ.get("MINIASV_OUT_ROOT")
    if not root:
        raise ConfigError("--out not given and MINIASV_OUT_ROOT is not set")
    return Path(root) / default_leaf


def _cmd_gen_data(args) -> int:
    cfg = resolve_config(args.config, args.set or [])
    out = _out_dir(args.out, "dataset")
    dataset = generate_dataset(cfg.data)
    save_dataset(dataset, out)
    acc = nearest_centroid_accuracy(dataset)
    print(f"wrote dataset to {out}")
    print(f"utterances: {len(dataset.ids)}  trials: {len(dataset.trials)} "
          f"({int(dataset.trials.labels.sum())} target)")
    print(f"nearest-centroid oracle accuracy: {acc:.4f}")
    return 0


def _cmd_train(args) -> int:
    data_dir = Path(args.data)
    dataset = load_dataset(data_dir)
    cfg = resolve_config(args.config, args.set or [],
                         num_speakers=dataset.spec.num_speakers)
    if cfg.data != dataset.spec:
        # the on-disk dataset wins; keep the echo truthful
        cfg = replace(cfg, data=dataset.spec)
    cfg.validate()
    out = _out_dir(args.out, "train")
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)

    model, trace = train(dataset, cfg.encoder, cfg.pooling, cfg.loss, cfg.train)
    save_checkpoint(model, out / "checkpoint.npz")
    (out / "trace.json").write_text(json.dumps(trace) + "\n", encoding="utf-8")
    print(f"trained {cfg.train.max_steps} steps on {data_dir} [{backend.active_backend()} kernels]")
    print(f"loss: first {trace['loss'][0]:.4f} -> last {trace['loss'][-1]:.4f}")
    print(f"wrote {out / 'checkpoint.npz'}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    dataset = load_dataset(args.data)
    trials = read_trials(args.trials) if args.trials else dataset.trials
    out = _out_dir(args.out, "eval")

    features = dataset.features_by_id()
    report = evaluate(model, features, trials)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    if args.scores:
        emb = {uid: embed_utterance(model, features[uid])
               for uid in sorted(set(trials.enroll) | set(trials.test))}
        scores = np.array([
            cosine_score(emb[e], emb[t]) for e, t in zip(trials.enroll, trials.test)
        ])
        write_scores(trials, scores, out / "scores.txt")

    table = {"title": "Evaluation", "note": "", "rows": [result_row("model", report)]}
    print(render_table(table), end="")
    print(f"wrote {out / 'eval.json'}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_suite(seed=args.seed, instances=args.instances)
    width = max(len(k) for k in results)
    ok = True
    for name, err in results.items():
        status = "ok" if err <= GRAD_TOLERANCE else "FAIL"
        ok &= err <= GRAD_TOLERANCE
        print(f"{name.ljust(width)}  max rel err {err:.3e}  [{status}]")
    print(f"tolerance {GRAD_TOLERANCE:.0e}; backend: {backend.active_backend()}")
    if not ok:
        raise MiniasvError("gradient check exceeded tolerance")
    return 0


def _cmd_sweep(args) -> int:
    base = sweep_base_config()
    if args.steps:
        base = replace(base, train=replace(base.train, max_steps=args.steps))
    dataset = load_dataset(args.data) if args.data else generate_dataset(base.data)
    if args.data:
        base = replace(base, data=dataset.spec,
                       loss=replace(base.loss, num_classes=dataset.spec.num_speakers))
    out = _out_dir(args.out, f"sweep-{args.axis}")
    report = run_sweep(args.axis, dataset, base, jobs=args.jobs, out_dir=out)
    txt, js = write_report(report, out)
    print(render_table(report), end="")
    print(f"wrote {txt} and {js}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="miniasv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config field (repeatable)")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory from gen-data")
    p.add_argument("--out", help="output run directory")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on verification trials")
    p.add_argument("--model", required=True, help="checkpoint .npz from train")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--trials", help="trial file overriding the dataset's own")
    p.add_argument("--scores", action="store_true", help="also write per-trial scores")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=100,
                   help="random instances per checked configuration")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("sweep", help="run an ablation grid and emit a results table")
    p.add_argument("--axis", required=True, choices=["pooling", "loss"])
    p.add_argument("--data", help="dataset directory (default: generate one)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--steps", type=int, help="training steps per grid point")
    p.add_argument("--jobs", type=int, default=1,
                   help="run grid points in this many parallel processes")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_EXIT
    except MiniasvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
