import json

import numpy as np
import pytest

from reloc_kit import fileio
from reloc_kit.cli import main


def run_synth(tmp_path, prefix="scene", **overrides):
    args = {
        "--layout": "general", "--n-db": "8", "--n-query": "3", "--topk": "5",
        "--noise-rot": "2", "--noise-dir": "2", "--seed": "0",
        "--out-prefix": str(tmp_path / prefix),
    }
    args.update(overrides)
    argv = ["synth"]
    for key, value in args.items():
        argv += [key, value]
    assert main(argv) == 0
    return str(tmp_path / prefix)


def test_synth_writes_deterministic_files(tmp_path, capsys):
    prefix_a = run_synth(tmp_path, "a")
    prefix_b = run_synth(tmp_path, "b")
    capsys.readouterr()
    for suffix in ("_db.txt", "_query_gt.txt", "_pairs.txt", "_estimates.txt",
                   "_gt_relposes.txt"):
        path_a = tmp_path / ("a" + suffix)
        path_b = tmp_path / ("b" + suffix)
        assert path_a.exists(), suffix
        assert path_a.read_bytes() == path_b.read_bytes(), suffix
    database = fileio.load_pose_file(tmp_path / "a_db.txt")
    assert len(database) == 8
    plan = fileio.load_pairs(tmp_path / "a_pairs.txt")
    assert len(plan) == 3
    assert all(len(ids) == 5 for ids in plan.values())
    estimates = fileio.load_estimates(tmp_path / "a_estimates.txt")
    assert len(estimates) == 15


def test_synth_prints_seed(tmp_path, capsys):
    run_synth(tmp_path, "seeded", **{"--seed": "42"})
    out = capsys.readouterr().out
    assert "seed: 42" in out


def test_localize_success_and_report(tmp_path, capsys):
    prefix = run_synth(tmp_path)
    report_path = tmp_path / "report.json"
    rc = main(["localize", "--db", prefix + "_db.txt",
               "--pairs", prefix + "_pairs.txt",
               "--estimates", prefix + "_estimates.txt",
               "--out", str(report_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "localized 3/3 queries" in out
    report = fileio.load_report(report_path)
    results = fileio.results_from_report(report)
    assert len(results) == 3
    assert all(r.error is None for r in results)


def test_localize_collinear_exits_2(tmp_path, capsys):
    prefix = run_synth(tmp_path, "col", **{"--layout": "collinear",
                                           "--noise-rot": "0", "--noise-dir": "0"})
    rc = main(["localize", "--db", prefix + "_db.txt",
               "--pairs", prefix + "_pairs.txt",
               "--estimates", prefix + "_estimates.txt"])
    assert rc == 2
    out = capsys.readouterr().out
    assert "DegenerateGeometry" in out


def test_localize_json_round_trips(tmp_path, capsys):
    prefix = run_synth(tmp_path)
    capsys.readouterr()  # discard the synth text output
    rc = main(["localize", "--db", prefix + "_db.txt",
               "--pairs", prefix + "_pairs.txt",
               "--estimates", prefix + "_estimates.txt",
               "--format", "json"])
    assert rc == 0
    out = capsys.readouterr().out
    stdout_report = json.loads(out)
    path = tmp_path / "roundtrip.json"
    path.write_text(out, encoding="utf-8")
    loaded = fileio.load_report(path)
    assert loaded == stdout_report
    assert len(fileio.results_from_report(loaded)) == 3


def test_localize_missing_file_exits_1(tmp_path, capsys):
    prefix = run_synth(tmp_path)
    rc = main(["localize", "--db", str(tmp_path / "nope.txt"),
               "--pairs", prefix + "_pairs.txt",
               "--estimates", prefix + "_estimates.txt"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_localize_thread_env(tmp_path, capsys, monkeypatch):
    prefix = run_synth(tmp_path)
    capsys.readouterr()  # discard the synth text output
    argv = ["localize", "--db", prefix + "_db.txt",
            "--pairs", prefix + "_pairs.txt",
            "--estimates", prefix + "_estimates.txt", "--format", "json"]
    assert main(argv) == 0
    sequential = json.loads(capsys.readouterr().out)
    monkeypatch.setenv("RELOC_KIT_THREADS", "4")
    assert main(argv) == 0
    threaded = json.loads(capsys.readouterr().out)
    assert threaded == sequential
    monkeypatch.setenv("RELOC_KIT_THREADS", "many")
    assert main(argv) == 1
    assert "RELOC_KIT_THREADS" in capsys.readouterr().err


def test_eval_relpose_perfect_and_noisy(tmp_path, capsys):
    prefix = run_synth(tmp_path)
    # ground truth against itself: every AUC is 1
    rc = main(["eval-relpose", "--pred", prefix + "_gt_relposes.txt",
               "--gt", prefix + "_gt_relposes.txt"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "AUC@5: 1.0000" in out
    assert "mAA@30: 1.0000" in out
    # noisy estimates score lower but parse fine
    rc = main(["eval-relpose", "--pred", prefix + "_estimates.txt",
               "--gt", prefix + "_gt_relposes.txt", "--format", "json"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    metrics = fileio.metrics_from_report(report)
    assert metrics.n_total == 15
    assert 0.0 < metrics.auc[5.0] <= 1.0


def test_eval_relpose_key_mismatch(tmp_path, capsys):
    prefix = run_synth(tmp_path)
    other = run_synth(tmp_path, "other", **{"--n-db": "6", "--topk": "3"})
    rc = main(["eval-relpose", "--pred", prefix + "_estimates.txt",
               "--gt", other + "_gt_relposes.txt"])
    assert rc == 1
    assert "missing" in capsys.readouterr().err


def test_avg_bench_table(tmp_path, capsys):
    rc = main(["avg-bench", "--trials", "5", "--k-list", "2,5",
               "--noise-rot", "2", "--noise-dir", "2",
               "--outlier-fraction", "0.2", "--seed", "0"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "median" in out and "mean" in out
    assert "seed: 0" in out
    assert "/5 trials" in out


def test_avg_bench_zero_noise_is_exact(capsys):
    rc = main(["avg-bench", "--trials", "3", "--k-list", "2,4",
               "--noise-rot", "0", "--noise-dir", "0", "--format", "json"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    for row in report["bench"]:
        assert row["median_rotation_deg"] < 1e-5
        assert row["median_translation_m"] < 1e-9


def test_avg_bench_rejects_bad_k(capsys):
    assert main(["avg-bench", "--trials", "2", "--k-list", "1,5"]) == 1
    assert ">= 2" in capsys.readouterr().err


def test_toy_train_writes_artifacts(tmp_path, capsys):
    ckpt = tmp_path / "toy.ckpt"
    trace = tmp_path / "trace.csv"
    rc = main(["toy-train", "--steps", "2", "--pairs", "1", "--seed", "0",
               "--out", str(ckpt), "--trace", str(trace)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "swap symmetry: exact" in out
    assert "seed: 0" in out
    assert ckpt.exists() and trace.exists()
    from reloc_kit.toy import load_checkpoint, load_trace
    model = load_checkpoint(ckpt)
    assert model.config.seed == 0
    rows = load_trace(trace)
    assert len(rows) == 3  # steps + 1


def test_version_and_help():
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    with pytest.raises(SystemExit):
        main([])  # a subcommand is required
