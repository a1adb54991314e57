import json

import numpy as np
import pytest

from xsecbench.cli import main
from xsecbench.datagen import Dataset, load_csv, write_csv
from xsecbench.netcore import DenseLayer, Model, load_model, save_model


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("generate", "--kind", "planted", "--n", 400, "--dim", 8, "--relevant", "0,1,2",
               "--out-dir", d) == 0
    assert run("train", "--data", d / "planted.csv", "--arch", 12, "--epochs", 15, "--out-dir", d) == 0
    return d


class TestTrain:
    def test_model_reloads(self, workspace):
        m = load_model(workspace / "model.json")
        assert m.in_dim == 8 and m.n_classes == 2
        summary = json.loads((workspace / "train_summary.json").read_text())
        assert {"accuracy", "precision", "recall", "f1"} <= set(summary["test"])
        assert summary["manifest"]["command"] == "train"

    def test_missing_data(self, tmp_path, capsys):
        assert run("train", "--data", tmp_path / "nope.csv", "--out-dir", tmp_path) == 2
        assert "no such file" in capsys.readouterr().err

    def test_byte_identical_rerun(self, workspace, tmp_path):
        args = ("train", "--data", workspace / "planted.csv", "--arch", "6,4", "--epochs", 3, "--seed", 5,
                "--out-dir", tmp_path)
        assert run(*args) == 0
        first = (tmp_path / "model.json").read_bytes()
        assert run(*args) == 0
        assert (tmp_path / "model.json").read_bytes() == first

    def test_divergence_exit_code(self, tmp_path):
        X = np.array([[1e200, -1e200], [-1e200, 1e200]] * 2)
        write_csv(Dataset(X, [0, 1, 1, 0], ["a", "b"], 2), tmp_path / "bad.csv")
        code = run("train", "--data", tmp_path / "bad.csv", "--arch", "", "--lr", 10, "--epochs", 50,
                   "--batch-size", 4, "--test-frac", 0, "--out-dir", tmp_path)
        assert code == 3

    def test_bad_arch(self, workspace, tmp_path):
        assert run("train", "--data", workspace / "planted.csv", "--arch", "a,b", "--out-dir", tmp_path) == 2


class TestExplain:
    def test_ranking_table(self, workspace, capsys):
        code = run("explain", "--model", workspace / "model.json", "--data", workspace / "planted.csv",
                   "--methods", "gradient,ig", "--topk", 10, "--out-dir", workspace)
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        header = next(i for i, l in enumerate(lines) if l.startswith("rank"))
        body = lines[header + 2:]
        assert "Gradient" in lines[header] and "Integrated Gradient" in lines[header]
        # k is clipped to the 8 features
        assert len(body) == 8
        for col in (1, 2):
            scores = [float(row.split("|")[col].split("(")[1].rstrip(") ")) for row in body]
            assert scores == sorted(scores, reverse=True)
        recs = [json.loads(l) for l in (workspace / "attributions.jsonl").read_text().splitlines()]
        assert recs[0]["manifest"]["methods"] == ["gradient", "integrated_gradients"]
        assert {r["method"] for r in recs[1:]} == {"gradient", "integrated_gradients"}

    def test_unknown_method(self, workspace, capsys):
        code = run("explain", "--model", workspace / "model.json", "--data", workspace / "planted.csv",
                   "--methods", "lrp", "--out-dir", workspace)
        assert code == 2
        err = capsys.readouterr().err
        assert "lrp" in err and "integrated_gradients" in err and "deepaid" in err

    def test_sequence_rows_and_deepaid(self, tmp_path, capsys):
        # toy detector: class 1 fires when event 3 appears anywhere in a window of 3
        vocab, window = 4, 3
        w1 = np.zeros(window * vocab)
        w1[np.arange(window) * vocab + 3] = 5.0
        model = Model((DenseLayer(np.stack([np.zeros_like(w1), w1]), [0.0, -2.0], "softmax"),))
        save_model(model, tmp_path / "m.json")
        (tmp_path / "s.seq").write_text("0 3 1 0\n0 1 2 0\n")
        common = ("--model", tmp_path / "m.json", "--data", tmp_path / "s.seq", "--window", window,
                  "--vocab", vocab, "--out-dir", tmp_path)
        assert run("explain", "--methods", "gradient", *common) == 0
        out = capsys.readouterr().out
        assert "pos 1: event 3" in out and "pos 0: event 0" in out
        assert run("explain", "--methods", "deepaid", "--benign-class", 0, *common) == 0
        out = capsys.readouterr().out
        assert "Anomaly Event ID" in out and "Benign Event ID" in out
        diff_rows = [l for l in out.splitlines() if "!=" in l]
        assert len(diff_rows) == 1 and diff_rows[0].startswith("3 ")


class TestEvaluate:
    def test_full_matrix_and_rerun(self, workspace, capsys):
        args = ("evaluate", "--model", workspace / "model.json", "--data", workspace / "planted.csv",
                "--n-points", 2, "--n-subsets", 10, "--n-perturb", 4, "--n-randomizations", 2,
                "--attr-samples", 64, "--out-dir", workspace)
        assert run(*args) == 0
        report = json.loads((workspace / "metric_report.json").read_text())
        assert len(report["methods"]) == 8 and len(report["metrics"]) == 8
        assert np.array(report["values"]).shape == (8, 8)
        assert set(report["rating"].values()) <= {1, 2, 3, 4, 5}
        first = (workspace / "metric_report.json").read_bytes()
        table = capsys.readouterr().out
        assert "↑" in table and "↓" in table and "*" in table
        assert run(*args) == 0
        assert (workspace / "metric_report.json").read_bytes() == first

    def test_single_metric(self, workspace):
        assert run("evaluate", "--model", workspace / "model.json", "--data", workspace / "planted.csv",
                   "--metrics", "sparsity", "--methods", "gradient,ig", "--n-points", 2,
                   "--out-dir", workspace) == 0
        report = json.loads((workspace / "metric_report.json").read_text())
        assert report["metrics"] == ["sparsity"] and np.array(report["values"]).shape == (2, 1)

    def test_unknown_metric(self, workspace):
        assert run("evaluate", "--model", workspace / "model.json", "--data", workspace / "planted.csv",
                   "--metrics", "beauty", "--out-dir", workspace) == 2


class TestAttackDetect:
    def test_zero_epsilon(self, workspace, tmp_path):
        assert run("attack", "--model", workspace / "model.json", "--data", workspace / "planted.csv",
                   "--eps", 0, "--out-dir", tmp_path) == 0
        np.testing.assert_array_equal(load_csv(tmp_path / "adversarial.csv").xs,
                                      load_csv(workspace / "planted.csv").xs)

    def test_negative_epsilon(self, workspace, tmp_path):
        assert run("attack", "--model", workspace / "model.json", "--data", workspace / "planted.csv",
                   "--eps", -0.1, "--out-dir", tmp_path) == 2

    @pytest.fixture
    def separable(self, tmp_path):
        # gradients are the weight rows: class 0 gives |w| all ones (MAD 0), class 1 gives MAD 1.5
        model = Model((DenseLayer([[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 3.0, -5.0]], [0.0, 0.0], "softmax"),))
        save_model(model, tmp_path / "m.json")
        names = ["a", "b", "c", "d"]
        write_csv(Dataset(np.tile([1.0, 1.0, 0.0, 0.0], (6, 1)), [0] * 6, names, 2), tmp_path / "ben.csv")
        write_csv(Dataset(np.tile([0.0, 0.0, 1.0, 0.0], (6, 1)), [0] * 6, names, 2), tmp_path / "adv.csv")
        return tmp_path

    def test_auto_threshold_separable(self, separable):
        d = separable
        assert run("detect", "--model", d / "m.json", "--data", d / "ben.csv", "--adversarial", d / "adv.csv",
                   "--threshold", "auto", "--bins", 4, "--out-dir", d) == 0
        report = json.loads((d / "detector_report.json").read_text())
        assert report["summary"]["f1"] == 1.0 and report["summary"]["calibration_f1"] == 1.0
        assert {"precision", "recall", "auroc"} <= set(report["summary"])
        s = report["samples"][0]
        assert set(s) == {"statistic", "value", "verdict", "truth"}
        assert len(report["samples"]) == 12
        rows = [l for l in (d / "detector_histogram.csv").read_text().splitlines() if not l.startswith("#")]
        assert rows[0] == "bin_lo,bin_hi,benign,adversarial" and len(rows) == 5
        assert sum(int(r.split(",")[2]) for r in rows[1:]) == 6
        rule = json.loads((d / "threshold_rule.json").read_text())
        assert rule["direction"] == "adversarial_if_greater" and "manifest" in rule

    def test_saved_rule_and_fixed_threshold(self, separable):
        d = separable
        base = ("detect", "--model", d / "m.json", "--data", d / "ben.csv", "--adversarial", d / "adv.csv")
        assert run(*base, "--threshold", "auto", "--out-dir", d / "a") == 0
        assert run(*base, "--rule", d / "a" / "threshold_rule.json", "--out-dir", d / "b") == 0
        assert json.loads((d / "b" / "detector_report.json").read_text())["summary"]["f1"] == 1.0
        assert run(*base, "--threshold", 0.5, "--direction", "adversarial_if_greater", "--out-dir", d / "c") == 0

    def test_empty_calibration_split(self, separable):
        d = separable
        assert run("detect", "--model", d / "m.json", "--data", d / "ben.csv", "--adversarial", d / "adv.csv",
                   "--calib-frac", 0.0, "--out-dir", d) == 2

    def test_report_renders_saved_files(self, separable, capsys):
        d = separable
        run("detect", "--model", d / "m.json", "--data", d / "ben.csv", "--adversarial", d / "adv.csv",
            "--out-dir", d)
        capsys.readouterr()
        assert run("report", "--input", d / "detector_report.json") == 0
        assert "auroc" in capsys.readouterr().out
        assert run("report", "--input", d / "ben.csv") == 2


class TestFormats:
    def test_data_format_is_json(self, workspace, capsys):
        assert run("explain", "--model", workspace / "model.json", "--data", workspace / "planted.csv",
                   "--methods", "occlusion", "--format", "data", "--out-dir", workspace) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["manifest"]["tool_version"] and doc["records"][0]["method"] == "occlusion"

    def test_truncated_model(self, workspace, tmp_path, capsys):
        text = (workspace / "model.json").read_text()
        (tmp_path / "t.json").write_text(text[:200])
        assert run("explain", "--model", tmp_path / "t.json", "--data", workspace / "planted.csv",
                   "--out-dir", tmp_path) == 2
        assert "line" in capsys.readouterr().err
