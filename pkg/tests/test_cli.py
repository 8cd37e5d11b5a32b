import json

import pytest

from motifx.cli import main


def run(argv, capsys=None):
    code = main(argv)
    return code


TINY = ["--nodes", "12", "--events", "80", "--seed", "3", "--h", "8",
        "--d-time-base", "4", "--d-time", "4", "--k-nb", "6", "--c", "6",
        "--c-per-node", "5", "--base-epochs", "2", "--expl-epochs", "2",
        "--n-queries", "6", "--per-hop-cap", "6", "--beta", "0.2"]


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    base = ["--run-dir", str(d)] + TINY
    assert main(["synth"] + base) == 0
    assert main(["census"] + base) == 0
    assert main(["train-base"] + base) == 0
    assert main(["train-explainer"] + base) == 0
    assert main(["explain"] + base) == 0
    assert main(["evaluate", "--emit-plot-data"] + base) == 0
    return d


class TestPipeline:
    def test_all_artifacts_exist(self, pipeline_dir):
        for name in ("graph.json", "census.json", "null_census.json", "base.ckpt",
                     "explainer.ckpt", "explanations.json", "report.json",
                     "curve.csv", "fidelity_sparsity.csv"):
            assert (pipeline_dir / name).exists(), name

    def test_manifests_written(self, pipeline_dir):
        man = json.loads((pipeline_dir / "graph.json.manifest.json").read_text())
        assert man["command"] == "synth"
        assert man["config"]["events"] == 80
        assert len(man["config_sha256"]) == 64
        assert man["package_version"]

    def test_census_keys_within_alphabet(self, pipeline_dir):
        payload = json.loads((pipeline_dir / "census.json").read_text())
        assert 0 < len(payload["classes"]) <= 12

    def test_report_shape(self, pipeline_dir):
        rep = json.loads((pipeline_dir / "report.json").read_text())
        assert len(rep["levels"]) == 16
        assert 0 <= rep["acc_auc"] <= 100

    def test_curve_csv_header(self, pipeline_dir):
        head = (pipeline_dir / "curve.csv").read_text().splitlines()[0]
        assert head == "query,level,fidelity,acc,source"

    def test_explanations_parse(self, pipeline_dir):
        payload = json.loads((pipeline_dir / "explanations.json").read_text())
        assert isinstance(payload, list) and payload


class TestDeterminism:
    def test_synth_and_census_byte_identical(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        for d in (d1, d2):
            args = ["--run-dir", str(d)] + TINY
            assert main(["synth"] + args) == 0
            assert main(["census"] + args) == 0
        for name in ("graph.json", "graph.json.manifest.json", "census.json"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    def test_rerun_in_place_byte_identical(self, tmp_path):
        d = tmp_path / "r"
        args = ["--run-dir", str(d)] + TINY
        assert main(["synth"] + args) == 0
        first = (d / "graph.json").read_bytes()
        assert main(["synth"] + args) == 0
        assert (d / "graph.json").read_bytes() == first


class TestErrors:
    def test_missing_dependency_exit_code_and_json(self, tmp_path, capsys):
        code = main(["evaluate", "--run-dir", str(tmp_path / "empty")])
        captured = capsys.readouterr()
        assert code == 2
        err = json.loads(captured.err.strip().splitlines()[-1])
        assert err["error"]["type"] == "DependencyError"
        assert "graph.json" in err["error"]["message"]

    def test_explain_bad_event_id(self, tmp_path, capsys):
        d = tmp_path / "x"
        args = ["--run-dir", str(d)] + TINY
        assert main(["synth"] + args) == 0
        assert main(["train-base"] + args) == 0
        assert main(["train-explainer"] + args) == 0
        code = main(["explain", "--event-id", "99999"] + args)
        assert code == 2

    def test_ingest_needs_csv(self, tmp_path, capsys):
        assert main(["ingest", "--run-dir", str(tmp_path / "i")]) == 2


class TestConfig:
    def test_file_and_flag_precedence(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"events": 50, "nodes": 10, "seed": 1}))
        d = tmp_path / "p"
        assert main(["synth", "--run-dir", str(d), "--config", str(cfg_file),
                     "--events", "60"]) == 0
        man = json.loads((d / "graph.json.manifest.json").read_text())
        assert man["config"]["events"] == 60   # flag wins
        assert man["config"]["nodes"] == 10    # file beats default

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg_file = tmp_path / "bad.json"
        cfg_file.write_text(json.dumps({"not_a_key": 5}))
        assert main(["synth", "--run-dir", str(tmp_path / "q"),
                     "--config", str(cfg_file)]) == 1

    def test_out_of_range_warning(self, tmp_path, capsys):
        d = tmp_path / "w"
        assert main(["synth", "--run-dir", str(d), "--nodes", "10",
                     "--events", "30", "--c", "500"]) == 0
        captured = capsys.readouterr()
        assert "outside the explored range" in captured.err
        man = json.loads((d / "graph.json.manifest.json").read_text())
        assert man["warnings"]

    def test_ingest_csv_flow(self, tmp_path):
        csv = tmp_path / "events.csv"
        csv.write_text("a,b,1\nb,c,2\nc,a,3\na,a,4\n")
        d = tmp_path / "ing"
        assert main(["ingest", "--run-dir", str(d), "--csv", str(csv)]) == 0
        payload = json.loads((d / "graph.json").read_text())
        assert payload["node_count"] == 3
        assert len(payload["events"]) == 3


def test_grad_check_command(capsys):
    assert main(["grad-check", "--points", "1"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert set(out) == {"time_encoder", "gine_layer", "concrete_sample",
                        "motif_encoder", "importance_scorer", "full_objective"}
    assert all(v < 1e-4 for v in out.values())


class TestEvaluateVariants:
    def test_jobs_and_adapter_reports_identical(self, pipeline_dir):
        import sys
        args = ["--run-dir", str(pipeline_dir)] + TINY
        assert main(["evaluate", "--jobs", "2"] + args) == 0
        parallel = (pipeline_dir / "report.json").read_bytes()
        assert main(["evaluate"] + args) == 0
        serial = (pipeline_dir / "report.json").read_bytes()
        assert parallel == serial
        # an adapter serving the very same checkpoint must reproduce the report
        cmd = f"{sys.executable} -m motifx.cli adapter-serve --run-dir {pipeline_dir}"
        assert main(["evaluate", "--adapter", cmd] + args) == 0
        assert (pipeline_dir / "report.json").read_bytes() == serial

    def test_adapter_env_var(self, pipeline_dir, monkeypatch):
        import sys
        from motifx.cli import ADAPTER_ENV
        cmd = f"{sys.executable} -m motifx.cli adapter-serve --run-dir {pipeline_dir}"
        monkeypatch.setenv(ADAPTER_ENV, cmd)
        args = ["--run-dir", str(pipeline_dir)] + TINY
        assert main(["evaluate"] + args) == 0
