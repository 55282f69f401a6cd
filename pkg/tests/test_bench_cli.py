import json
import math

import numpy as np
import pytest

from stableclust.bench import (ConfigError, InstanceSpec, SuiteConfig, build_config, dataset_hash,
                               generate_instance, parse_config_text, recovery_gamma, run_suite,
                               simplex_centers)
from stableclust.cli import main
from stableclust.geometry import load_dataset
from stableclust.lemmas import run_lemma_suite


def test_parse_config_values():
    vals = parse_config_text("""
        # a comment
        pipelines = [central-kmeans, ldp-kmeans]
        epsilon = 0.5      # trailing comment
        final_lloyd = true
        sa_epsilon = auto
        out_dir = "runs/a"
    """)
    cfg = build_config(vals)
    assert cfg.pipelines == ("central-kmeans", "ldp-kmeans")
    assert cfg.epsilon == 0.5 and cfg.final_lloyd is True and cfg.sa_epsilon is None
    assert cfg.out_dir == "runs/a"


@pytest.mark.parametrize("text, line", [
    ("epsilon = 1\nnot a pair\n", 2),
    ("epsilon = 1\ntrials = 2\nbogus = 3\n", 3),
    ("pipelines = [central-kmeans, nope]\n", 1),
    ("\n\ntrials = 1.5\n", 3),
    ("final_lloyd = 3\n", 1),
    ("accept.unknown = 0.9\n", 1),
])
def test_config_errors_name_line(text, line):
    with pytest.raises(ConfigError, match=f"line {line}:"):
        build_config(parse_config_text(text))


def test_accept_overrides():
    cfg = build_config(parse_config_text("accept.ldp-kmeans = 0.85\n"))
    assert cfg.accept == {"ldp-kmeans": 0.85}


def test_empty_pipeline_list_is_ok(tmp_path):
    cfg = build_config({"pipelines": [], "out_dir": str(tmp_path)})
    res = run_suite(cfg)
    assert res.ok and res.rows == []
    assert (tmp_path / "results.csv").read_text().startswith("pipeline,seed")


def test_simplex_centers_geometry():
    c = simplex_centers(3, 2, 1.0)
    assert np.allclose(np.linalg.norm(c, axis=1), 1.0)
    gaps = {round(float(np.linalg.norm(c[i] - c[j])), 9) for i in range(3) for j in range(i + 1, 3)}
    assert len(gaps) == 1
    assert simplex_centers(2, 2, 0.5).tolist() == [[-0.5, 0.0], [0.5, 0.0]]
    square = simplex_centers(4, 2, 1.0)
    assert np.allclose(np.abs(square), math.sqrt(0.5))


def test_generate_instance_is_deterministic():
    spec = InstanceSpec(k=2, d=2, n=500, seed=7)
    a, b = generate_instance(spec, restarts=2), generate_instance(spec, restarts=2)
    assert dataset_hash(a.data) == dataset_hash(b.data)
    assert dataset_hash(a.data) != dataset_hash(generate_instance(InstanceSpec(k=2, d=2, n=500, seed=8),
                                                                  restarts=2).data)
    assert a.report.phi_p < 0.01


def test_recovery_gamma():
    assert recovery_gamma(0.0) == 0.0
    assert recovery_gamma(0.3) == math.inf
    assert recovery_gamma(0.01) == pytest.approx(math.sqrt(1.6 / 0.96))


def _small_cfg(tmp_path, **kw):
    base = {"pipelines": ["central-kmeans", "central-kmedian", "ldp-kmeans", "sample-aggregate"],
            "trials": 2, "n": 2000, "T": 10, "oracle_restarts": 3, "out_dir": str(tmp_path)}
    base.update(kw)
    return build_config(base)


def test_run_suite_is_byte_deterministic(tmp_path):
    run_suite(_small_cfg(tmp_path / "a"))
    run_suite(_small_cfg(tmp_path / "b"))
    a = (tmp_path / "a" / "results.csv").read_bytes()
    assert a == (tmp_path / "b" / "results.csv").read_bytes()
    assert len(a.decode().splitlines()) == 1 + 4 * 2
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert set(summary["pipelines"]) == {"central-kmeans", "central-kmedian", "ldp-kmeans",
                                         "sample-aggregate"}


def test_cli_gen_and_audit(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"n = 400\nout_dir = {tmp_path}\n")
    assert main(["gen", "--config", str(cfg), "--seed", "3", "--format", "json"]) == 0
    meta = json.loads((tmp_path / "instance_meta.json").read_text())
    data = load_dataset(tmp_path / "instance.json")
    assert meta["sha256"] == dataset_hash(data)
    capsys.readouterr()
    assert main(["audit", str(tmp_path / "instance.json"), "--k", "2", "--mode", "heuristic",
                 "--restarts", "3"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["phi_p"] < 0.01


def test_cli_run_and_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("trials = 1\nwhat = 2\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    code = main(["run", "--pipeline", "central-kmeans", "--epsilon", "1", "--out-dir", str(tmp_path),
                 "--seed", "4"])
    assert code in (0, 1)
    assert (tmp_path / "results.csv").exists()


def test_cli_verify_lemmas(capsys):
    assert main(["verify-lemmas", "--instances", "50", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "50/50" in out


def test_lemma_suite_small():
    res = run_lemma_suite(100, seed=3)
    assert res.ok and all(v == 100 for v in res.passed.values())
