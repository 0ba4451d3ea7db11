import json
import subprocess
import sys

import pytest

from empathy_pipeline import cli

STAGES = ("synth", "train-role-lms", "annotate-roles", "segment", "featurize", "split", "train", "predict", "evaluate")

SMALL = {
    "seed": 11,
    "synth": {"n_sessions": 50, "mean_session_s": 60, "interactions_per_session": 0.4, "audio": True},
    "train": {"C": [0.1, 1.0], "gamma": [0.001, 0.01], "W": [1, 3], "folds": 3},
}


def _write_cfg(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def _run_chain(tmp, doc, stages=STAGES):
    tmp.mkdir(parents=True, exist_ok=True)
    cfg = _write_cfg(tmp / "cfg.json", {**doc, "output_dir": "out"})
    return [cli.main([stage, "--config", cfg]) for stage in stages]


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_evaluate_bundled_fixture(tmp_path, fixtures_dir):
    cfg = _write_cfg(tmp_path / "cfg.json", {"paths": {"predictions": str(fixtures_dir / "predictions.json")},
                                             "output_dir": str(tmp_path / "out")})
    assert cli.main(["evaluate", "--config", cfg]) == 0
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert metrics["ap"] == pytest.approx((1 + 1 + 0.75 + 0.5) / 4)
    assert [metrics["edr"][k]["n_selected"] for k in ("0.2", "0.5", "0.8")] == [1, 4, 8]
    assert metrics["edr"]["0.5"]["pos"] == pytest.approx(100 * 4 / 12)
    assert metrics["edr"]["0.5"]["poa"] == pytest.approx(100 * 100.6 / 300)
    assert (tmp_path / "out" / "pr_curve.tsv").is_file()


def test_missing_annotations_named(tmp_path, caplog):
    missing = tmp_path / "nope" / "annotations.jsonl"
    assert _run_chain(tmp_path, {"synth": {"n_sessions": 3, "mean_session_s": 60}}, ("synth",)) == [0]
    cfg = _write_cfg(tmp_path / "cfg_bad.json", {"paths": {"annotations": str(missing)}, "output_dir": "out"})
    with caplog.at_level("ERROR"):
        assert cli.main(["segment", "--config", cfg]) == 2
    assert str(missing) in caplog.text


def test_missing_upstream_artifact(tmp_path, caplog):
    assert _run_chain(tmp_path, {"synth": {"n_sessions": 3, "mean_session_s": 60}}, ("synth",)) == [0]
    cfg = str(tmp_path / "cfg.json")
    with caplog.at_level("ERROR"):
        assert cli.main(["annotate-roles", "--config", cfg]) == 3
        assert cli.main(["predict", "--config", cfg]) == 3
        assert cli.main(["evaluate", "--config", cfg]) == 3
    assert "role_lms.json" in caplog.text


def test_bad_config(tmp_path):
    assert cli.main(["evaluate", "--config", str(tmp_path / "absent.json")]) == 2
    bad = _write_cfg(tmp_path / "bad.json", {"combo": "embed+nonsense"})
    assert cli.main(["evaluate", "--config", bad]) == 2
    bad = _write_cfg(tmp_path / "bad2.json", {"colour": 1})
    assert cli.main(["evaluate", "--config", bad]) == 2
    bad = _write_cfg(tmp_path / "bad3.json", {"synth": {"n_sessions": 2, "role_word_ratio": [1, 1, 1]}})
    assert cli.main(["synth", "--config", bad]) == 2


def test_module_entry_point(tmp_path, fixtures_dir):
    cfg = _write_cfg(tmp_path / "cfg.json", {"paths": {"predictions": str(fixtures_dir / "predictions.json")}})
    proc = subprocess.run([sys.executable, "-m", "empathy_pipeline", "evaluate", "--config", cfg,
                           "--output", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "stage=evaluate" in proc.stderr and "positives=4" in proc.stderr


@pytest.fixture(scope="module")
def chain_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("chain")
    codes_a = _run_chain(base / "a", SMALL)
    codes_b = _run_chain(base / "b", SMALL)
    codes_c = _run_chain(base / "c", {**SMALL, "n_jobs": 2})
    return base, (codes_a, codes_b, codes_c)


def test_full_chain(chain_runs):
    base, codes = chain_runs
    assert codes[0] == [0] * len(STAGES)
    out = base / "a" / "out"
    for name in cli.ARTIFACTS.values():
        assert (out / name).is_file(), name
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0 < metrics["ap"] <= 1 and metrics["n_positive"] > 0
    assert set(metrics["edr"]) == {"0.2", "0.5", "0.8", "n_interactions"}
    split = json.loads((out / "split.json").read_text())
    assert not set(split["train"]) & set(split["test"])
    assert set(split["excluded"]) <= set(split["train"])


def test_rerun_byte_identical(chain_runs):
    base, codes = chain_runs
    assert codes[1] == codes[0] == [0] * len(STAGES)
    a, b = _tree(base / "a" / "out"), _tree(base / "b" / "out")
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []


def test_parallel_run_byte_identical(chain_runs):
    base, codes = chain_runs
    assert codes[2] == [0] * len(STAGES)
    a, c = _tree(base / "a" / "out"), _tree(base / "c" / "out")
    assert [k for k in a if a[k] != c[k]] == []


def test_seed_override_changes_output(tmp_path):
    doc = {"synth": {"n_sessions": 3, "mean_session_s": 60}, "output_dir": "out"}
    cfg = _write_cfg(tmp_path / "cfg.json", doc)
    assert cli.main(["synth", "--config", cfg, "--output", str(tmp_path / "x"), "--seed", "1"]) == 0
    assert cli.main(["synth", "--config", cfg, "--output", str(tmp_path / "y"), "--seed", "2"]) == 0
    x = (tmp_path / "x" / "corpus" / "transcripts.jsonl").read_bytes()
    assert x != (tmp_path / "y" / "corpus" / "transcripts.jsonl").read_bytes()
