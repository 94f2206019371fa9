import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from polyclick import synth
from polyclick.cli import main
from polyclick.dataset import emit, write_impressions


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def clicks_file(tmp_path_factory) -> Path:
    pool = synth.make_click_pool(n=900, n_campaigns=3, seed=20)
    path = tmp_path_factory.mktemp("clicks") / "clicks.jsonl"
    emit(pool, path)
    return path


def run_train(runner, clicks, out, extra=()):
    return runner.invoke(
        main, ["train", "--input", str(clicks), "--output-dir", str(out),
               "--seed", "3", *extra],
    )


class TestTrain:
    def test_three_campaigns_three_models(self, runner, clicks_file, tmp_path):
        out = tmp_path / "out"
        result = run_train(runner, clicks_file, out)
        assert result.exit_code == 0, result.output
        models = sorted((out / "models").glob("*.model.json"))
        reports = sorted((out / "reports").glob("*.report.json"))
        assert len(models) == 3
        assert len(reports) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert sorted(manifest["models"]) == ["c00", "c01", "c02"]
        assert (out / "ingest_report.json").exists()

    def test_single_click_campaign_isolated(self, runner, tmp_path):
        pool = synth.make_click_pool(n=600, n_campaigns=2, seed=21)
        lonely = pool.clicks[0]
        lonely = type(lonely)(**{**vars(lonely), "campaign": "lonely"})
        clicks = tmp_path / "clicks.jsonl"
        emit(type(pool).from_impressions(pool.clicks + (lonely,)), clicks)
        out = tmp_path / "out"
        result = run_train(runner, clicks, out)
        assert result.exit_code == 0, result.output
        manifest = json.loads((out / "manifest.json").read_text())
        assert sorted(manifest["models"]) == ["c00", "c01"]
        assert [f["campaign"] for f in manifest["failures"]] == ["lonely"]

    def test_rerun_byte_identical(self, runner, clicks_file, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_train(runner, clicks_file, out1).exit_code == 0
        assert run_train(runner, clicks_file, out2).exit_code == 0
        files1 = sorted((out1 / "models").glob("*.model.json"))
        files2 = sorted((out2 / "models").glob("*.model.json"))
        assert [f.name for f in files1] == [f.name for f in files2]
        for f1, f2 in zip(files1, files2):
            assert f1.read_bytes() == f2.read_bytes()
        assert (out1 / "manifest.json").read_bytes() == (out2 / "manifest.json").read_bytes()

    def test_unknown_config_key_rejected(self, runner, clicks_file, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"input": str(clicks_file), "turbo": True}))
        result = runner.invoke(main, ["train", "--config", str(config)])
        assert result.exit_code != 0
        assert "turbo" in result.output

    def test_no_input_errors(self, runner):
        result = runner.invoke(main, ["train"])
        assert result.exit_code != 0

    def test_config_file_drives_run(self, runner, clicks_file, tmp_path):
        out = tmp_path / "cfg_out"
        config = tmp_path / "config.json"
        config.write_text(json.dumps({
            "input": str(clicks_file),
            "output_dir": str(out),
            "split": {"method": "random", "ratio": 3.0, "seed": 5},
            "fit": {"ridge": 1e-6},
            "sampling": {"tau_pos": 1.0, "tau_neg": 0.5},
            "workers": 2,
        }))
        result = runner.invoke(main, ["train", "--config", str(config)])
        assert result.exit_code == 0, result.output
        model_doc = json.loads(next((out / "models").glob("*.model.json")).read_text())
        assert model_doc["sampling_ratio"] == pytest.approx(2.0)


@pytest.fixture(scope="module")
def trained(runner, clicks_file, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("trained")
    result = run_train(runner, clicks_file, out)
    assert result.exit_code == 0, result.output
    return out


class TestEvaluate:
    def test_outputs(self, runner, clicks_file, trained, tmp_path):
        out = tmp_path / "eval"
        result = runner.invoke(main, [
            "evaluate", "--models", str(trained / "models"),
            "--clicks", str(clicks_file), "--output-dir", str(out),
            "--policy", "top", "--batch-size", "200",
        ])
        assert result.exit_code == 0, result.output
        doc = json.loads((out / "metrics.json").read_text())
        assert doc["policy"] == "top"
        assert set(doc["total"]) == {"precision", "negative_rate", "recall", "accuracy"}
        assert "coverage" in doc and 0.0 <= doc["coverage"]["fraction"] <= 1.0
        csv_lines = (out / "metrics_timeseries.csv").read_text().strip().splitlines()
        assert csv_lines[0].startswith("batch,")
        assert len(csv_lines) > 1
        assert (out / "metrics_timeseries.png").stat().st_size > 0

    def test_unreadable_models_error(self, runner, clicks_file, tmp_path):
        models_dir = tmp_path / "broken"
        models_dir.mkdir()
        (models_dir / "bad.model.json").write_text("{not json")
        result = runner.invoke(main, [
            "evaluate", "--models", str(models_dir), "--clicks", str(clicks_file),
            "--output-dir", str(tmp_path / "x"),
        ])
        assert result.exit_code != 0

    def test_empty_clicks_error(self, runner, trained, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        result = runner.invoke(main, [
            "evaluate", "--models", str(trained / "models"), "--clicks", str(empty),
            "--output-dir", str(tmp_path / "y"),
        ])
        assert result.exit_code != 0


class TestScoreAndBench:
    @pytest.fixture()
    def batch_file(self, tmp_path) -> Path:
        imps = synth.random_impressions(n=400, seed=23, n_domains=40, n_zips=50)
        path = tmp_path / "impressions.jsonl"
        write_impressions(imps, path)
        return path

    def test_score_decisions_csv(self, runner, trained, batch_file, tmp_path):
        out = tmp_path / "decisions.csv"
        result = runner.invoke(main, [
            "score", "--models", str(trained / "models"),
            "--batch", str(batch_file), "--output", str(out),
        ])
        assert result.exit_code == 0, result.output
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "ordinal,campaign,n_accepted,accepted_by,top_choice"
        assert len(lines) == 401

    @pytest.mark.parametrize("backend", ["bsearch", "hash"])
    def test_score_backends_agree(self, runner, trained, batch_file, tmp_path, backend):
        out = tmp_path / f"decisions-{backend}.csv"
        result = runner.invoke(main, [
            "score", "--models", str(trained / "models"),
            "--batch", str(batch_file), "--output", str(out),
            "--backend", backend,
        ])
        assert result.exit_code == 0
        base = tmp_path / "decisions-bsearch.csv"
        if backend == "hash" and base.exists():
            assert out.read_bytes() == base.read_bytes()

    def test_bench_outputs(self, runner, trained, batch_file, tmp_path):
        out = tmp_path / "benchout"
        result = runner.invoke(main, [
            "bench", "--models", str(trained / "models"),
            "--batch", str(batch_file), "--threads", "1",
            "--min-seconds", "0.15", "--output-dir", str(out),
        ])
        assert result.exit_code == 0, result.output
        rows = json.loads((out / "bench.json").read_text())
        assert rows[0]["threads"] == 1 and rows[0]["qps"] > 0
        assert (out / "bench.csv").exists()
        assert (out / "bench.png").stat().st_size > 0


class TestRocExport:
    def test_outputs(self, runner, clicks_file, trained, tmp_path):
        model_file = sorted((trained / "models").glob("*.model.json"))[0]
        out = tmp_path / "roc"
        result = runner.invoke(main, [
            "roc-export", "--model", str(model_file),
            "--clicks", str(clicks_file), "--output-dir", str(out),
        ])
        assert result.exit_code == 0, result.output
        csv_path = next(out.glob("*.roc.csv"))
        assert csv_path.read_text().startswith("cut,fp_rate,tp_rate")
        threshold = json.loads(next(out.glob("*.threshold.json")).read_text())
        assert set(threshold) == {"cut", "tp_rate", "fp_rate", "youden"}
        assert next(out.glob("*.roc.png")).stat().st_size > 0
