"""Command-line entry point: ``simmaml <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import torch

from ..corpus import write_tsv
from ..errors import ConfigError, SimMamlError
from ..neurnet.checkpoint import load_checkpoint
from ..relevance import save_index
from .analysis import analyze_neighbors, format_analysis
from .runner import evaluate, get_index, load_datasets, run, sweep, write_report
from .spec import RunSpec, dump_config, load_config

log = logging.getLogger("simmaml")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors share the config-error exit code
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="YAML run configuration")
    g.add_argument("--preset", choices=("desk", "paper"), default="desk")
    g.add_argument("--dataset", choices=("synth", "scan", "cogs"))
    g.add_argument("--train-file")
    g.add_argument("--gen-file")
    g.add_argument("--kernel", choices=("lev", "ssk", "ptk", "uniform"))
    g.add_argument("--eta", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--topk", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--outer-lr", type=float)
    g.add_argument("--steps", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--first-order", action="store_true", default=None)
    g.add_argument("--mode", choices=("supervised", "maml"))
    g.add_argument("--seed", type=int, help="single test seed")
    g.add_argument("--seeds", type=_ints, help="comma-separated test seeds")
    g.add_argument("--dev-seeds", type=_ints, help="comma-separated development seeds")
    g.add_argument("--index-cache")
    g.add_argument("--out-dir", default="out")
    g.add_argument("--log-level", default="INFO")


def overrides_from_args(args: argparse.Namespace) -> dict:
    """Translate command-line flags into a config document to merge over the file."""
    o: dict = {}

    def put(section: str, key: str, value) -> None:
        if value is not None:
            o.setdefault(section, {})[key] = value

    put("dataset", "name", args.dataset)
    put("dataset", "train_file", args.train_file)
    put("dataset", "gen_file", args.gen_file)
    put("kernel", "kind", args.kernel)
    put("sampler", "eta", args.eta)
    put("sampler", "lambda", args.lam)
    put("run", "topk", args.topk)
    put("trainer", "alpha", args.alpha)
    put("trainer", "outer_lr", args.outer_lr)
    put("trainer", "steps", args.steps)
    put("trainer", "batch_size", args.batch_size)
    put("trainer", "first_order", args.first_order)
    put("trainer", "mode", args.mode)
    put("model", "hidden", args.hidden)
    put("run", "seeds", [args.seed] if args.seed is not None else args.seeds)
    put("run", "dev_seeds", args.dev_seeds)
    put("run", "index_cache", args.index_cache)
    if getattr(args, "alphas", None) is not None:
        put("sweep", "alpha", args.alphas)
    if getattr(args, "etas", None) is not None:
        put("sweep", "eta", args.etas)
    if getattr(args, "synth_seed", None) is not None:
        put("dataset", "synth_seed", args.synth_seed)
    return o


def resolve(args: argparse.Namespace) -> RunSpec:
    return load_config(args.config, overrides_from_args(args), preset=args.preset)


def _out(args: argparse.Namespace) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands ---------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    spec = resolve(args)
    out = _out(args)
    data = load_datasets(spec)
    write_tsv(data.train, out / "train.tsv")
    write_tsv(data.gen, out / "gen.tsv")
    dump_config(spec, out / "config.yaml")
    print(f"train\t{len(data.train)}\t{out / 'train.tsv'}")
    print(f"gen\t{len(data.gen)}\t{out / 'gen.tsv'}")
    return 0


def cmd_build_index(args) -> int:
    spec = resolve(args).with_overrides(trainer={"mode": "maml"})
    out = _out(args)
    if spec.index_cache is None:
        spec = spec.with_overrides(run={"index_cache": str(out / f"{spec.kernel.kind}.idx")})
    data = load_datasets(spec)
    path = Path(spec.index_cache)
    if path.exists():
        path.unlink()
    idx = get_index(spec, data.train)
    save_index(idx, path)
    dump_config(spec, out / "config.yaml")
    print(f"{spec.kernel.kind}\tk={idx.k}\tanchors={len(idx)}\t{path}")
    return 0


def cmd_train(args) -> int:
    spec = resolve(args)
    report = run(spec, _out(args), phase="test")
    _print_summary(report)
    return 0


def cmd_eval(args) -> int:
    spec = resolve(args)
    out = _out(args)
    params, model_cfg, src_vocab, tgt_vocab, meta = load_checkpoint(args.checkpoint)
    data = load_datasets(spec)
    splits = {name: dataclasses.replace(c, source_vocab=src_vocab, target_vocab=tgt_vocab)
              for name, c in {"train": data.train, **data.eval_splits()}.items()}
    evals = {name: evaluate(params, model_cfg, c, spec.max_len) for name, c in splits.items()}
    seed = meta.get("seed", 0)
    report = {"phase": "eval", "mode": meta.get("trainer", {}).get("mode", "unknown"),
              "kernel": spec.kernel.kind, "checkpoint": str(args.checkpoint),
              "sizes": {n: len(c) for n, c in splits.items()},
              "per_seed": [{"seed": seed, "splits": evals, "final_loss_meta_train": None,
                            "final_loss_meta_test": None}],
              "aggregate": {n: {"mean": e["accuracy"], "std": 0.0, "values": [e["accuracy"]]}
                            for n, e in evals.items()}}
    write_report(report, out)
    _print_summary(report)
    return 0


def cmd_analyze(args) -> int:
    spec = resolve(args)
    out = _out(args)
    data = load_datasets(spec)
    rows = []
    for kind in args.kernels:
        kspec = spec.with_overrides(kernel={"kind": kind}, trainer={"mode": "maml"},
                                    run={"index_cache": None, "topk": max(args.topk_list)})
        rows += analyze_neighbors(data.train, get_index(kspec, data.train), args.topk_list)
    (out / "analysis.tsv").write_text(format_analysis(rows), encoding="utf-8")
    (out / "analysis.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    if rows:
        from .plotting import plot_analysis
        plot_analysis(rows, out / "analysis.png")
    dump_config(spec, out / "config.yaml")
    sys.stdout.write(format_analysis(rows))
    return 0


def cmd_sweep(args) -> int:
    spec = resolve(args)
    result = sweep(spec, _out(args), with_baseline=not args.no_baseline)
    sel = result["selected"]
    print(f"selected alpha={sel['alpha']} eta={sel['eta']} (gen_dev {sel['gen_dev_mean']:.4f})")
    _print_summary(result["maml"])
    if "paired" in result:
        p = result["paired"]
        print(f"paired gen: supervised {p['baseline_mean']:.4f}  maml {p['other_mean']:.4f}  "
              f"delta {p['mean_delta']:+.4f}")
    return 0


def _print_summary(report: dict) -> None:
    for split, agg in report["aggregate"].items():
        print(f"{split}\tmean={agg['mean']:.4f}\tstd={agg['std']:.4f}\tn={report['sizes'][split]}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simmaml", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the synthetic (or loaded) splits as TSV")
    _common(p)
    p.add_argument("--synth-seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-index", help="precompute the top-k neighbour index")
    _common(p)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("train", help="train and evaluate over the test seeds")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="neighbour length / atom statistics per kernel")
    _common(p)
    p.add_argument("--kernels", type=lambda s: s.split(","), default=["lev", "ssk", "ptk"])
    p.add_argument("--topk-list", type=_ints, default=[10, 100, 1000])
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="select alpha/eta on Gen Dev, then report on test seeds")
    _common(p)
    p.add_argument("--alphas", type=_floats)
    p.add_argument("--etas", type=_floats)
    p.add_argument("--no-baseline", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:          # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except SimMamlError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except NotImplementedError as exc:
        log.error("%s", exc)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
