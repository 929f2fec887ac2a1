"""Run specifications: one YAML document plus command-line overrides."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from ..corpus import SynthConfig
from ..errors import ConfigError
from ..kernels import KernelConfig
from ..maml import TrainerConfig
from ..neurnet.seq2seq import Seq2SeqConfig
from ..relevance import SamplerConfig

DATASETS = ("synth", "scan", "cogs")

# desk-scale defaults; the larger preset lives in PAPER_OVERRIDES
DEFAULTS: dict[str, Any] = {
    "dataset": {"name": "synth", "train_file": None, "gen_file": None, "eval_files": {},
                "synth": {}, "synth_seed": 0},
    "kernel": {"kind": "lev"},
    "sampler": {"eta": None, "lambda": 0.5, "rng_seed": 0},
    "trainer": {"mode": "maml", "alpha": 0.01, "outer_lr": 1e-2, "steps": 400, "batch_size": 16},
    "model": {"hidden": 64, "encoder_layers": 1},
    "run": {"seeds": [0, 1, 2, 3, 4], "dev_seeds": [100, 101], "gen_dev_fraction": 0.1,
            "split_seed": 0, "topk": 1000, "index_cache": None, "max_len": 50},
    "sweep": {"alpha": [0.001, 0.01, 0.1], "eta": None},
}

PAPER_OVERRIDES: dict[str, Any] = {
    "model": {"hidden": 256, "encoder_layers": 2},
    "trainer": {"steps": 1000, "batch_size": 128, "outer_lr": 1e-3},
}


def default_eta(kind: str) -> float:
    """Raw Levenshtein scores are integers; normalized kernels live in [0, 1]."""
    return 1.0 if kind == "lev" else 0.1


def deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "eval_files":
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _build(cls, section: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown {what} option(s): {', '.join(sorted(unknown))}")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad {what} section: {exc}") from None


@dataclass(frozen=True)
class RunSpec:
    dataset: str
    train_file: str | None
    gen_file: str | None
    eval_files: dict[str, str]
    synth: SynthConfig
    synth_seed: int
    kernel: KernelConfig
    sampler: SamplerConfig
    trainer: TrainerConfig
    model: Seq2SeqConfig
    seeds: tuple[int, ...]
    dev_seeds: tuple[int, ...] = ()
    gen_dev_fraction: float = 0.1
    split_seed: int = 0
    topk: int = 1000
    index_cache: str | None = None
    max_len: int = 50
    sweep_alpha: tuple[float, ...] = ()
    sweep_eta: tuple[float, ...] = ()
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def mode(self) -> str:
        return self.trainer.mode

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if (self.dataset != "synth" or self.train_file or self.gen_file) \
                and not (self.train_file and self.gen_file):
            raise ConfigError(f"dataset {self.dataset!r} needs --train-file and --gen-file")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if set(self.seeds) & set(self.dev_seeds):
            raise ConfigError("development and test seeds must be disjoint: "
                              f"{sorted(set(self.seeds) & set(self.dev_seeds))}")
        if not 0.0 < self.gen_dev_fraction < 1.0:
            raise ConfigError("gen_dev_fraction must lie strictly between 0 and 1")
        if self.topk < 1 or self.max_len < 1:
            raise ConfigError("topk and max_len must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunSpec":
        d = deep_merge(DEFAULTS, doc)
        unknown = set(d) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        ds, run, sw = d["dataset"], d["run"], d["sweep"]
        kernel = _build(KernelConfig, d["kernel"], "kernel")
        samp = dict(d["sampler"])
        if samp.get("eta") is None:
            samp["eta"] = default_eta(kernel.kind)
        samp["lam"] = samp.pop("lambda")
        d["sampler"]["eta"] = samp["eta"]
        synth = dict(ds.get("synth") or {})
        for key in ("nouns", "verbs", "preps", "templates"):
            if key in synth:
                synth[key] = tuple(tuple(v) if isinstance(v, list) else v for v in synth[key])
        extra = set(run) - set(DEFAULTS["run"])
        if extra:
            raise ConfigError(f"unknown run option(s): {', '.join(sorted(extra))}")
        return cls(
            dataset=ds["name"], train_file=ds["train_file"], gen_file=ds["gen_file"],
            eval_files=dict(ds.get("eval_files") or {}),
            synth=_build(SynthConfig, synth, "synth"), synth_seed=int(ds["synth_seed"]),
            kernel=kernel, sampler=_build(SamplerConfig, samp, "sampler"),
            trainer=_build(TrainerConfig, d["trainer"], "trainer"),
            model=_build(Seq2SeqConfig, d["model"], "model"),
            seeds=tuple(int(s) for s in run["seeds"]),
            dev_seeds=tuple(int(s) for s in run["dev_seeds"] or ()),
            gen_dev_fraction=float(run["gen_dev_fraction"]), split_seed=int(run["split_seed"]),
            topk=int(run["topk"]), index_cache=run["index_cache"], max_len=int(run["max_len"]),
            sweep_alpha=tuple(float(a) for a in sw.get("alpha") or ()),
            sweep_eta=tuple(float(e) for e in sw.get("eta") or ()),
            raw=d,
        )

    def with_overrides(self, **sections: dict) -> "RunSpec":
        return RunSpec.from_dict(deep_merge(self.raw, sections))

    def to_dict(self) -> dict:
        """The fully resolved document (what gets written next to the outputs)."""
        return copy.deepcopy(self.raw)


def load_config(path: str | Path | None, overrides: dict | None = None,
                preset: str = "desk") -> RunSpec:
    doc: dict = {}
    if preset == "paper":
        doc = deep_merge(doc, PAPER_OVERRIDES)
    elif preset != "desk":
        raise ConfigError(f"unknown preset {preset!r}")
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping at the top level")
        doc = deep_merge(doc, loaded or {})
    return RunSpec.from_dict(deep_merge(doc, overrides or {}))


def dump_config(spec: RunSpec, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(spec.to_dict(), sort_keys=True), encoding="utf-8")
