"""Run driver: data preparation, index caching, multi-seed training and exact-match evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..corpus import Corpus, generate_synthetic, load_cogs, load_scan
from ..errors import ConfigError, DataError, SimMamlError
from ..maml import train
from ..neurnet.autodiff import ModelParams
from ..neurnet.checkpoint import save_checkpoint
from ..neurnet.seq2seq import Seq2SeqConfig, decode_greedy
from ..relevance import NeighborIndex, build_index, corpus_trees, load_index, save_index
from .spec import RunSpec, dump_config

log = logging.getLogger(__name__)

NO_TAG = "(none)"


@dataclass
class Datasets:
    train: Corpus
    gen: Corpus
    gen_dev: Corpus
    gen_test: Corpus
    extra: dict[str, Corpus] = field(default_factory=dict)

    def eval_splits(self) -> dict[str, Corpus]:
        return {"gen": self.gen, "gen_dev": self.gen_dev, "gen_test": self.gen_test, **self.extra}


def load_datasets(spec: RunSpec) -> Datasets:
    """Read (or generate) every split. Evaluation splits share the training vocabularies."""
    def loader(path, vocabs=None):
        if spec.dataset == "scan":
            return load_scan(path, vocabs=vocabs)
        return load_cogs(path, vocabs=vocabs, dialect=spec.dataset)

    if spec.dataset == "synth" and not spec.train_file:
        train_c, gen = generate_synthetic(spec.synth, spec.synth_seed)
    else:
        train_c = loader(spec.train_file)
        gen = loader(spec.gen_file, vocabs=(train_c.source_vocab, train_c.target_vocab))
    vocabs = (train_c.source_vocab, train_c.target_vocab)
    extra = {}
    for name, path in sorted(spec.eval_files.items()):
        if name in ("gen", "gen_dev", "gen_test", "train"):
            raise ConfigError(f"evaluation split name {name!r} is reserved")
        extra[name] = loader(path, vocabs=vocabs)
    gen_dev, gen_test = make_gen_dev(gen, spec.gen_dev_fraction, spec.split_seed)
    return Datasets(train_c, gen, gen_dev, gen_test, extra)


def make_gen_dev(gen: Corpus, fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Seeded split of the generalization set into (Gen Dev, remainder)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError("fraction must lie strictly between 0 and 1")
    n_dev = int(round(fraction * len(gen)))
    if n_dev == 0 or n_dev == len(gen):
        raise ConfigError(f"fraction {fraction} of {len(gen)} examples leaves one side empty")
    perm = np.random.default_rng(seed).permutation(len(gen))
    dev_ids, rest_ids = sorted(perm[:n_dev].tolist()), sorted(perm[n_dev:].tolist())
    return gen.subset(dev_ids, f"{gen.name}_dev"), gen.subset(rest_ids, f"{gen.name}_test")


# --- evaluation ----------------------------------------------------------------------

def evaluate(params: ModelParams, model_cfg: Seq2SeqConfig, corpus: Corpus,
             max_len: int = 50) -> dict:
    """Greedy-decode every example; exact match on token sequences, overall and per tag."""
    if len(corpus) == 0:
        return {"accuracy": 0.0, "n": 0, "correct": 0, "per_tag": {}}
    preds = decode_greedy(params, model_cfg, [e.source for e in corpus],
                          corpus.source_vocab, corpus.target_vocab, max_len=max_len)
    per_tag: dict[str, list[int]] = {}
    correct = 0
    for pred, ex in zip(preds, corpus):
        ok = tuple(pred) == ex.target
        correct += ok
        bucket = per_tag.setdefault(ex.tag if ex.tag is not None else NO_TAG, [0, 0])
        bucket[0] += ok
        bucket[1] += 1
    return {
        "accuracy": correct / len(corpus), "n": len(corpus), "correct": correct,
        "per_tag": {t: {"accuracy": c / n, "n": n, "correct": c}
                    for t, (c, n) in sorted(per_tag.items())},
    }


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def aggregate(per_seed: list[dict]) -> dict:
    out = {}
    for split in per_seed[0]["splits"]:
        values = [entry["splits"][split]["accuracy"] for entry in per_seed]
        mean, std = mean_std(values)
        out[split] = {"mean": mean, "std": std, "values": values}
    return out


# --- index ---------------------------------------------------------------------------

def get_index(spec: RunSpec, train_c: Corpus) -> NeighborIndex | None:
    """Build the neighbour index for the training corpus, reusing ``index_cache`` when present."""
    if spec.mode != "maml":
        return None
    cache = Path(spec.index_cache) if spec.index_cache else None
    if cache is not None and cache.exists():
        idx = load_index(cache, train_c)
        if idx.kernel != spec.kernel or idx.k != spec.topk:
            raise ConfigError(f"index cache {cache} was built with {idx.kernel} k={idx.k}; "
                              f"requested {spec.kernel} k={spec.topk}")
        return idx
    trees = corpus_trees(train_c) if spec.kernel.kind == "ptk" else None
    idx = build_index(train_c, spec.kernel, spec.topk, trees)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        save_index(idx, cache)
    return idx


# --- multi-seed runs -----------------------------------------------------------------

def run_seed(spec: RunSpec, data: Datasets, idx: NeighborIndex | None, seed: int,
             splits: Sequence[str], out_dir: Path | None = None) -> dict:
    tcfg = spec.trainer.__class__(**{**spec.trainer.to_dict(), "seed": seed})
    log_path = out_dir / f"train_seed{seed}.jsonl" if out_dir else None
    if log_path is not None and log_path.exists():
        log_path.unlink()
    try:
        # only the training corpus is handed to the trainer
        result = train(data.train, idx, spec.sampler, tcfg, spec.model, log_path=log_path)
    except SimMamlError as exc:
        raise type(exc)(f"seed {seed}: {exc}") from None
    available = data.eval_splits()
    evals = {name: evaluate(result.params, spec.model, available[name], spec.max_len)
             for name in splits}
    if out_dir is not None:
        save_checkpoint(out_dir / f"model_seed{seed}.ckpt", result.params, spec.model,
                        data.train.source_vocab, data.train.target_vocab,
                        {"seed": seed, "trainer": tcfg.to_dict()})
    curve = [(r["step"], r["loss_meta_train"], r["loss_meta_test"]) for r in result.log]
    return {"seed": seed, "final_loss_meta_train": curve[-1][1],
            "final_loss_meta_test": curve[-1][2], "splits": evals, "curve": curve}


def run(spec: RunSpec, out_dir: str | Path | None = None, phase: str = "test",
        data: Datasets | None = None, idx: NeighborIndex | None = None) -> dict:
    """Train and evaluate once per seed.

    ``phase="test"`` uses the test seeds and evaluates on every split;
    ``phase="dev"`` uses the development seeds and evaluates on Gen Dev only.
    """
    if phase not in ("test", "dev"):
        raise ConfigError(f"phase must be 'test' or 'dev', got {phase!r}")
    seeds = spec.seeds if phase == "test" else spec.dev_seeds
    if not seeds:
        raise ConfigError(f"no seeds declared for the {phase} phase")
    out = Path(out_dir) if out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        dump_config(spec, out / "config.yaml")
    data = data or load_datasets(spec)
    if idx is None:
        idx = get_index(spec, data.train)
    splits = ["gen_dev"] if phase == "dev" else ["gen", "gen_dev", "gen_test", *data.extra]
    per_seed = []
    for seed in seeds:
        log.info("%s seed %d (%s, kernel=%s)", phase, seed, spec.mode, spec.kernel.kind)
        per_seed.append(run_seed(spec, data, idx, seed, splits, out))
    report = {
        "phase": phase, "mode": spec.mode, "kernel": spec.kernel.kind,
        "alpha": spec.trainer.alpha, "eta": spec.sampler.eta, "lambda": spec.sampler.lam,
        "sizes": {"train": len(data.train), **{k: len(v) for k, v in data.eval_splits().items()}},
        "per_seed": [{k: v for k, v in entry.items() if k != "curve"} for entry in per_seed],
        "aggregate": aggregate(per_seed),
    }
    if out is not None:
        write_report(report, out)
        from .plotting import plot_learning_curves, plot_seed_accuracy
        plot_learning_curves({e["seed"]: e["curve"] for e in per_seed}, out / "learning_curves.png")
        plot_seed_accuracy(report, out / "accuracy.png")
    return report


def paired_deltas(baseline: dict, other: dict, split: str = "gen") -> dict:
    """Per-seed accuracy differences ``other - baseline`` over the seeds both reports share."""
    base = {e["seed"]: e["splits"][split]["accuracy"] for e in baseline["per_seed"]}
    oth = {e["seed"]: e["splits"][split]["accuracy"] for e in other["per_seed"]}
    seeds = sorted(set(base) & set(oth))
    if not seeds:
        raise DataError("the two reports share no seeds")
    deltas = [oth[s] - base[s] for s in seeds]
    mean, std = mean_std(deltas)
    return {"split": split, "seeds": seeds, "baseline": [base[s] for s in seeds],
            "other": [oth[s] for s in seeds], "deltas": deltas, "mean_delta": mean,
            "std_delta": std, "baseline_mean": float(np.mean([base[s] for s in seeds])),
            "other_mean": float(np.mean([oth[s] for s in seeds]))}


# --- report files --------------------------------------------------------------------

def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def write_report(report: dict, out: Path) -> None:
    """``report.json`` plus two tab-separated summaries; no wall-clock data, so reruns match byte for byte."""
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    splits = list(report["aggregate"])
    rows = ["\t".join(["seed", *splits, "final_loss_meta_train", "final_loss_meta_test"])]
    for e in report["per_seed"]:
        rows.append("\t".join([str(e["seed"]), *(_fmt(e["splits"][s]["accuracy"]) for s in splits),
                               _fmt(e["final_loss_meta_train"]), _fmt(e["final_loss_meta_test"])]))
    (out / "per_seed.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    rows = ["split\tn\tmean\tstd"]
    for s in splits:
        agg = report["aggregate"][s]
        rows.append(f"{s}\t{report['sizes'][s]}\t{_fmt(agg['mean'])}\t{_fmt(agg['std'])}")
    (out / "summary.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    tag_rows = ["seed\tsplit\ttag\tn\taccuracy"]
    for e in report["per_seed"]:
        for s in splits:
            for tag, t in e["splits"][s]["per_tag"].items():
                tag_rows.append(f"{e['seed']}\t{s}\t{tag}\t{t['n']}\t{_fmt(t['accuracy'])}")
    (out / "per_tag.tsv").write_text("\n".join(tag_rows) + "\n", encoding="utf-8")


def write_paired(paired: dict, path: Path, label: str = "maml") -> None:
    rows = [f"seed\tbaseline\t{label}\tdelta"]
    for s, b, o, d in zip(paired["seeds"], paired["baseline"], paired["other"], paired["deltas"]):
        rows.append(f"{s}\t{_fmt(b)}\t{_fmt(o)}\t{_fmt(d)}")
    rows.append(f"mean\t{_fmt(paired['baseline_mean'])}\t{_fmt(paired['other_mean'])}"
                f"\t{_fmt(paired['mean_delta'])}")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


# --- hyperparameter sweep ------------------------------------------------------------

def sweep(spec: RunSpec, out_dir: str | Path, with_baseline: bool = True) -> dict:
    """Select (alpha, eta) on Gen Dev with the dev seeds, then retrain with the test seeds.

    The chosen configuration is rerun from scratch on the disjoint test seeds;
    with ``with_baseline`` the supervised model is trained on the same test
    seeds and paired per-seed deltas are written.
    """
    if spec.mode != "maml":
        raise ConfigError("sweep selects MAML hyperparameters; set mode to 'maml'")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(spec, out / "config.yaml")
    data = load_datasets(spec)
    idx = get_index(spec, data.train)
    alphas = spec.sweep_alpha or (spec.trainer.alpha,)
    etas = spec.sweep_eta or (spec.sampler.eta,)
    if spec.kernel.kind == "uniform":
        etas = (spec.sampler.eta,)      # temperature is irrelevant for uniform sampling
    grid = []
    for alpha in alphas:
        for eta in etas:
            cand = spec.with_overrides(trainer={"alpha": alpha}, sampler={"eta": eta})
            rep = run(cand, None, phase="dev", data=data, idx=idx)
            grid.append({"alpha": alpha, "eta": eta,
                         "gen_dev_mean": rep["aggregate"]["gen_dev"]["mean"],
                         "gen_dev_std": rep["aggregate"]["gen_dev"]["std"]})
    # ties go to the earliest grid point, which keeps the choice deterministic
    best = max(grid, key=lambda g: g["gen_dev_mean"])
    rows = ["alpha\teta\tgen_dev_mean\tgen_dev_std"] + [
        f"{g['alpha']}\t{g['eta']}\t{_fmt(g['gen_dev_mean'])}\t{_fmt(g['gen_dev_std'])}" for g in grid]
    (out / "dev_grid.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    chosen = spec.with_overrides(trainer={"alpha": best["alpha"]}, sampler={"eta": best["eta"]})
    final = run(chosen, out / "maml", phase="test", data=data, idx=idx)
    result = {"grid": grid, "selected": best, "maml": final}
    if with_baseline:
        base_spec = spec.with_overrides(trainer={"mode": "supervised"})
        base = run(base_spec, out / "supervised", phase="test", data=data)
        paired = paired_deltas(base, final, "gen_test")
        write_paired(paired, out / "paired.tsv", label=f"{spec.kernel.kind}_maml")
        result.update(supervised=base, paired=paired)
        from .plotting import plot_paired
        plot_paired(paired, out / "paired.png", label=f"{spec.kernel.kind}-MAML")
    (out / "sweep.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    return result
