import json

import numpy as np
import pytest

from simmaml import maml
from simmaml.corpus import build_corpus, generate_synthetic
from simmaml.errors import ConfigError
from simmaml.harness import cli
from simmaml.harness.analysis import analyze_neighbors, format_analysis
from simmaml.harness.runner import (evaluate, load_datasets, make_gen_dev, mean_std,
                                    paired_deltas, run)
from simmaml.harness.spec import RunSpec, load_config
from simmaml.kernels import KernelConfig
from simmaml.neurnet import Seq2SeqConfig, init_params
from simmaml.relevance import build_index, corpus_trees

QUICK = {"trainer": {"steps": 3, "batch_size": 4}, "model": {"hidden": 8}, "run": {"seeds": [0]}}
QUICK_ARGS = ["--steps", "3", "--hidden", "8", "--batch-size", "4", "--seeds", "0"]


def test_make_gen_dev_split():
    pairs = [(f"w{i}", f"W{i}", None) for i in range(1000)]
    gen = build_corpus(pairs, "gen")
    dev, rest = make_gen_dev(gen, 0.1, seed=4)
    assert len(dev) == 100 and len(rest) == 900
    dev_src, rest_src = {e.source for e in dev}, {e.source for e in rest}
    assert not dev_src & rest_src
    assert dev_src | rest_src == {e.source for e in gen}
    again, _ = make_gen_dev(gen, 0.1, seed=4)
    assert [e.source for e in again] == [e.source for e in dev]
    other, _ = make_gen_dev(gen, 0.1, seed=5)
    assert [e.source for e in other] != [e.source for e in dev]
    for bad in (0.0, 1.0, 0.0001):
        with pytest.raises(ConfigError):
            make_gen_dev(gen, bad, seed=0)


def test_untrained_model_near_zero_and_tags_cover(synth):
    train, gen = synth
    cfg = Seq2SeqConfig(hidden=16)
    params = init_params(cfg, len(train.source_vocab), len(train.target_vocab), seed=0)
    res = evaluate(params, cfg, gen)
    assert res["accuracy"] < 0.05
    assert set(res["per_tag"]) == {e.tag for e in gen}
    weighted = sum(t["accuracy"] * t["n"] for t in res["per_tag"].values()) / res["n"]
    assert abs(weighted - res["accuracy"]) < 1e-12


def test_exact_match_on_memorized_corpus(tiny):
    from test_neurnet import _gd_overfit
    params, cfg, _ = _gd_overfit(tiny, 200)
    res = evaluate(params, cfg, tiny)
    assert res["accuracy"] == 1.0
    assert res["per_tag"]["rep"]["n"] == 4
    weighted = sum(t["accuracy"] * t["n"] for t in res["per_tag"].values()) / res["n"]
    assert abs(weighted - res["accuracy"]) < 1e-12


def test_untagged_examples_get_placeholder_tag(tiny):
    plain = build_corpus([("walk", "WALK", None)], "p",
                         vocabs=(tiny.source_vocab, tiny.target_vocab))
    cfg = Seq2SeqConfig(hidden=8)
    params = init_params(cfg, len(tiny.source_vocab), len(tiny.target_vocab))
    assert list(evaluate(params, cfg, plain)["per_tag"]) == ["(none)"]


def test_mean_std():
    assert mean_std([0.5]) == (0.5, 0.0)
    m, s = mean_std([0.1, 0.2, 0.6])
    assert m == pytest.approx(0.3) and s == pytest.approx(np.std([0.1, 0.2, 0.6], ddof=1))


def test_single_seed_report(tmp_path):
    spec = load_config(None, {**QUICK, "trainer": {**QUICK["trainer"], "mode": "supervised"}})
    rep = run(spec, tmp_path)
    assert len(rep["per_seed"]) == 1
    for split, agg in rep["aggregate"].items():
        values = [e["splits"][split]["accuracy"] for e in rep["per_seed"]]
        assert agg["values"] == values
        assert agg["mean"] == pytest.approx(np.mean(values), abs=1e-15)
        assert 0.0 <= agg["mean"] <= 1.0
    for name in ("report.json", "per_seed.tsv", "summary.tsv", "per_tag.tsv", "config.yaml",
                 "learning_curves.png", "accuracy.png", "model_seed0.ckpt", "train_seed0.jsonl"):
        assert (tmp_path / name).exists(), name
    assert load_config(tmp_path / "config.yaml") == spec


def test_multi_seed_aggregate_and_paired(tmp_path):
    base = load_config(None, {**QUICK, "trainer": {**QUICK["trainer"], "mode": "supervised"},
                              "run": {"seeds": [0, 1, 2]}})
    a = run(base, None)
    vals = a["aggregate"]["gen"]["values"]
    assert a["aggregate"]["gen"]["std"] == pytest.approx(np.std(vals, ddof=1), abs=1e-15)
    b = run(base.with_overrides(trainer={"mode": "maml"}), None)
    paired = paired_deltas(a, b, "gen_test")
    assert paired["seeds"] == [0, 1, 2]
    assert paired["mean_delta"] == pytest.approx(paired["other_mean"] - paired["baseline_mean"])


def test_dev_phase_touches_only_gen_dev():
    spec = load_config(None, {**QUICK, "run": {"seeds": [0], "dev_seeds": [7]}})
    rep = run(spec, None, phase="dev")
    assert [e["seed"] for e in rep["per_seed"]] == [7]
    assert list(rep["aggregate"]) == ["gen_dev"]


def test_trainer_receives_only_train_corpus(monkeypatch):
    spec = load_config(None, QUICK)
    data = load_datasets(spec)
    seen = []
    real = maml.train

    def spy(corpus, *args, **kwargs):
        seen.append(corpus)
        return real(corpus, *args, **kwargs)

    import simmaml.harness.runner as runner
    monkeypatch.setattr(runner, "train", spy)
    run(spec, None, data=data)
    assert seen and all(c is data.train for c in seen)


def test_spec_validation():
    with pytest.raises(ConfigError, match="disjoint"):
        load_config(None, {"run": {"seeds": [1, 2], "dev_seeds": [2]}})
    with pytest.raises(ConfigError):
        load_config(None, {"run": {"seeds": []}})
    with pytest.raises(ConfigError):
        load_config(None, {"dataset": {"name": "cogs"}})
    with pytest.raises(ConfigError):
        load_config(None, {"kernel": {"kind": "cosine"}})
    with pytest.raises(ConfigError):
        load_config(None, {"trainer": {"nonsense": 1}})
    assert isinstance(load_config(None), RunSpec)
    assert load_config(None, preset="paper").model.hidden == 256


def test_analysis_edge_cases():
    same = build_corpus([(s, s.upper(), None) for s in ["ab cd", "ef gh", "ij kl", "mn op"]], "s")
    rows = analyze_neighbors(same, build_index(same, KernelConfig("lev"), k=3), [1, 3])
    assert [r["k"] for r in rows] == [1, 3]
    assert all(r["length_std"] == 0.0 for r in rows)
    one = build_corpus([("walk", "WALK", None)], "one")
    assert analyze_neighbors(one, build_index(one, KernelConfig("lev"), k=3)) == []
    assert format_analysis([]).count("\n") == 1


def test_lev_retrieves_no_more_atoms_than_ptk(synth):
    train = synth[0]
    rows = {}
    for kind in ("lev", "ptk"):
        idx = build_index(train, KernelConfig(kind), k=10,
                          trees=corpus_trees(train) if kind == "ptk" else None)
        rows[kind] = analyze_neighbors(train, idx, [10])[0]
    assert rows["lev"]["atoms_mean"] <= rows["ptk"]["atoms_mean"]


# --- CLI -----------------------------------------------------------------------------

def test_cli_gen_data_and_analyze(tmp_path, capsys):
    assert cli.main(["gen-data", "--out-dir", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "train.tsv").exists()
    train, gen = generate_synthetic()
    assert len((tmp_path / "d" / "gen.tsv").read_text().splitlines()) == len(gen)
    code = cli.main(["analyze", "--kernels", "lev,ssk", "--topk-list", "5,10",
                     "--out-dir", str(tmp_path / "a")])
    assert code == 0
    assert len(json.loads((tmp_path / "a" / "analysis.json").read_text())) == 4
    assert (tmp_path / "a" / "analysis.png").exists()


def test_cli_train_is_byte_reproducible(tmp_path):
    for d in ("r1", "r2"):
        assert cli.main(["train", *QUICK_ARGS, "--out-dir", str(tmp_path / d)]) == 0
    for name in ("report.json", "per_seed.tsv", "summary.tsv", "per_tag.tsv", "config.yaml",
                 "learning_curves.png", "accuracy.png", "model_seed0.ckpt"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes(), name


def test_cli_build_index_then_train_and_eval(tmp_path):
    cache = tmp_path / "lev.idx"
    assert cli.main(["build-index", "--topk", "20", "--index-cache", str(cache),
                     "--out-dir", str(tmp_path / "i")]) == 0
    assert cache.exists()
    assert cli.main(["train", *QUICK_ARGS, "--topk", "20", "--index-cache", str(cache),
                     "--out-dir", str(tmp_path / "t")]) == 0
    # cached index built with another k is refused
    assert cli.main(["train", *QUICK_ARGS, "--topk", "30", "--index-cache", str(cache),
                     "--out-dir", str(tmp_path / "t2")]) == 1
    ckpt = tmp_path / "t" / "model_seed0.ckpt"
    assert cli.main(["eval", "--checkpoint", str(ckpt), "--out-dir", str(tmp_path / "e")]) == 0
    report = json.loads((tmp_path / "e" / "report.json").read_text())
    assert set(report["aggregate"]) >= {"train", "gen", "gen_dev", "gen_test"}


def test_cli_sweep_without_baseline(tmp_path):
    code = cli.main(["sweep", *QUICK_ARGS, "--alphas", "0.0,0.01", "--dev-seeds", "5",
                     "--no-baseline", "--out-dir", str(tmp_path)])
    assert code == 0
    grid = (tmp_path / "dev_grid.tsv").read_text().splitlines()
    assert len(grid) == 3
    assert (tmp_path / "maml" / "report.json").exists()


@pytest.mark.parametrize("argv,code", [
    (["train", "--kernel", "cosine"], 1),
    (["train", "--seeds", "1", "--dev-seeds", "1"], 1),
    (["frobnicate"], 1),
    (["train", "--dataset", "cogs", "--train-file", "/nonexistent/t.tsv",
      "--gen-file", "/nonexistent/g.tsv"], 2),
])
def test_cli_error_exit_codes(tmp_path, argv, code):
    assert cli.main([*argv, "--out-dir", str(tmp_path)] if argv[0] == "train" else argv) == code


def test_cli_bad_data_file(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("only one field\n")
    code = cli.main(["train", *QUICK_ARGS, "--dataset", "cogs", "--train-file", str(bad),
                     "--gen-file", str(bad), "--out-dir", str(tmp_path / "o")])
    assert code == 2


def test_cli_numerical_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(maml, "nll_loss", lambda *a, **k: __import__("torch").tensor(
        float("nan"), dtype=__import__("torch").float64, requires_grad=True))
    code = cli.main(["train", *QUICK_ARGS, "--mode", "supervised", "--out-dir", str(tmp_path)])
    assert code == 3
