import json
from pathlib import Path

import numpy as np
import pytest

from freqsep import scenario, simulate, write_realization_csv
from freqsep.cli import IngestError, RunConfig, ingest, main, run_pipeline, selftest, selftest_config


def _write_csv(path: Path, header, rows):
    text = ",".join(header) + "\n" + "".join(",".join(repr(float(v)) if not isinstance(v, str) else v for v in r) + "\n" for r in rows)
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def flight_shaped(tmp_path):
    t = 0.5 * np.arange(274)
    rng = np.random.default_rng(0)
    rows = np.column_stack([t, rng.standard_normal((274, 5))])
    return _write_csv(tmp_path / "flight.csv", ["t", "x1", "x2", "x3", "x4", "y"], rows.tolist())


@pytest.fixture(scope="module")
def sim_2x1(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    plant = scenario("independent-2x1", 1)
    real = simulate(plant)
    write_realization_csv(d / "data.csv", real)
    return d / "data.csv", plant, real


class TestIngest:
    def test_record_shape(self, flight_shaped):
        ins, outs = ingest(flight_shaped, ["x1", "x2", "x3", "x4"], ["y"])
        assert len(ins) == 4 and len(outs) == 1
        assert ins[0].count == 274 and ins[0].sample_period == pytest.approx(0.5)
        assert ins[0].duration == pytest.approx(136.5)
        assert [r.channel_id for r in ins] == ["x1", "x2", "x3", "x4"]

    def test_no_time_column(self, tmp_path):
        p = _write_csv(tmp_path / "a.csv", ["x"], [[1.0], [2.0], [3.0]])
        (rec,), _ = ingest(p, ["x"], [], sample_period=0.25)
        assert rec.start_time == 0.0 and rec.duration == 0.5
        with pytest.raises(IngestError, match="sample period"):
            ingest(p, ["x"], [])

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("t,x\n0,1\n1,2,3\n", encoding="utf-8")
        with pytest.raises(IngestError, match="row 3"):
            ingest(p, ["x"], [])

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("t,x,y\n0,1,2\n1,oops,3\n", encoding="utf-8")
        with pytest.raises(IngestError, match=r"row 3, column 'x'"):
            ingest(p, ["x"], ["y"])

    def test_missing_channel(self, flight_shaped):
        with pytest.raises(IngestError, match="'z'"):
            ingest(flight_shaped, ["z"], ["y"])

    def test_jitter(self, tmp_path):
        t = 0.5 * np.arange(20)
        t[7] += 1e-4
        p = _write_csv(tmp_path / "a.csv", ["t", "x"], np.column_stack([t, t]).tolist())
        with pytest.raises(IngestError, match="non-uniform"):
            ingest(p, ["x"], [])
        t[7] -= 1e-4 - 1e-9
        p = _write_csv(tmp_path / "b.csv", ["t", "x"], np.column_stack([t, t]).tolist())
        ingest(p, ["x"], [])

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestError, match="no such file"):
            ingest(tmp_path / "nope.csv", ["x"], [])


class TestRunConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            RunConfig(inputs=[], outputs=["y"]).validate()
        with pytest.raises(ValueError, match="both"):
            RunConfig(inputs=["x"], outputs=["x"]).validate()
        with pytest.raises(ValueError, match="band"):
            RunConfig(inputs=["x"], outputs=["y"], band=(2.0, 1.0)).validate()

    def test_file_overrides(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"threshold_value": 0.3, "band": [1, 2], "fits": [{"input": "x", "output": "y", "n": 2, "m": 1}]}))
        cfg = RunConfig(threshold_value=0.1, band=(0, 5)).apply_file(p)
        assert cfg.threshold_value == 0.3 and cfg.band == (1, 2) and cfg.fits == {("x", "y"): (2, 1, 0)}


class TestPipeline:
    def test_counts_match_truth(self, sim_2x1, tmp_path):
        path, plant, real = sim_2x1
        cfg = selftest_config("independent-2x1", plant)
        cfg.data = str(path)
        out = run_pipeline(cfg, tmp_path / "out")
        assert out.exit_code == 0
        counts = out.summary["counts"]
        for q in plant.input_labels:
            truth = len(real.exact_inputs[q]) + len(real.input_noise[q])
            assert counts["detected_input_lines"][q] == truth
            assert counts["independent_input_lines"][q] == truth
            assert counts["matched_lines"][f"{q}->y1"] == len(real.exact_inputs[q])
        y_truth = len(real.exact_outputs["y1"]) + len(real.output_noise["y1"])
        assert counts["detected_output_lines"]["y1"] == y_truth
        assert counts["coupling_lines"] == 0

    def test_report_files(self, sim_2x1, tmp_path):
        path, plant, _ = sim_2x1
        cfg = selftest_config("independent-2x1", plant)
        cfg.data = str(path)
        out = tmp_path / "out"
        run_pipeline(cfg, out)
        expected = [
            "summary.json", "secondary.json", "tertiary.json", "quaternary.json",
            "secondary/x1.csv", "secondary/y1.csv", "tertiary/x2.csv", "tertiary/coupling.csv",
            "quaternary/x1__y1.csv", "estimates/x1__y1.json", "estimates/x2__y1.csv",
            "filtered/x1__y1.csv", "scans/y1.csv",
        ]
        for rel in expected:
            assert (out / rel).is_file(), rel
        for f in out.rglob("*"):
            if f.is_file():
                raw = f.read_bytes()
                raw.decode("utf-8")
                assert b"\r" not in raw and raw.endswith(b"\n")
                if f.suffix == ".json":
                    assert next(iter(json.loads(raw))) == "format_version"
        summary = json.loads((out / "summary.json").read_text())
        assert summary["parameters"]["delta"] == pytest.approx(2 * np.pi / plant.duration)
        assert "generated" not in summary
        # every matched frequency traces back to both detections
        for m in summary["matches"]:
            assert abs(m["omega_input"] - m["omega_output"]) <= summary["parameters"]["delta"]
            assert m["nu"] == pytest.approx((m["omega_input"] + m["omega_output"]) / 2)
        header = (out / "filtered/x1__y1.csv").read_text().splitlines()[0]
        assert header == "t,input,input_filtered,output,output_filtered"

    def test_reports_are_deterministic(self, sim_2x1, tmp_path):
        path, plant, _ = sim_2x1
        cfg = selftest_config("independent-2x1", plant)
        cfg.data = str(path)
        run_pipeline(cfg, tmp_path / "a")
        run_pipeline(cfg, tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_empty_detection(self, tmp_path):
        t = 0.5 * np.arange(300)
        p = _write_csv(tmp_path / "z.csv", ["t", "x", "y"], np.column_stack([t, 0 * t, 0 * t]).tolist())
        out = run_pipeline(RunConfig(data=str(p), inputs=["x"], outputs=["y"]), tmp_path / "out")
        assert out.exit_code != 0
        assert out.summary["outputs_without_estimate"] == ["y"]
        assert out.summary["failures"] and out.summary["status"].startswith("no estimate")

    def test_pitch_scenario_fits_ninth_order(self, tmp_path):
        plant = scenario("pitch-4x1", 1)
        real = simulate(plant)
        write_realization_csv(tmp_path / "d.csv", real)
        cfg = selftest_config("pitch-4x1", plant)
        cfg.data = str(tmp_path / "d.csv")
        out = run_pipeline(cfg, tmp_path / "out")
        est = out.result.estimate("x1", "y")
        d = est.matched_count
        assert d > 0
        n, m, k = cfg.fits[("x1", "y")]
        assert 2 * d >= (m + 1) + n + 1
        assert est.fit is not None and est.fit.order_n == 9 and est.fit.astatism == 1


class TestSelftest:
    @pytest.mark.parametrize("name", ["independent-2x1", "correlated-3x2", "identity"])
    def test_named_scenarios_pass(self, name):
        ok, report = selftest(name, 1)
        assert ok, report
        assert "|W| true" in report

    def test_coupling_reported(self):
        _, report = selftest("correlated-3x2", 1)
        assert "[PASS] coupling: 5 reported, 5 injected, 5 coincide" in report

    def test_identity_unity(self):
        _, report = selftest("identity", 1)
        rows = [l for l in report.splitlines() if l.startswith("x1->y1")]
        assert rows and all(l.split()[2] == l.split()[3] == "1.00000" for l in rows)

    def test_failure_is_report_content(self, monkeypatch):
        import freqsep.cli as cli

        monkeypatch.setattr(cli, "MAG_TOL", 1e-9)
        ok, report = cli.selftest("independent-2x1", 1)
        assert not ok and "[FAIL]" in report and report.rstrip().endswith("FAIL")


class TestMain:
    def test_simulate_uses_env_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FREQSEP_OUTPUT_DIR", str(tmp_path / "envdir"))
        assert main(["simulate", "--scenario", "identity"]) == 0
        assert (tmp_path / "envdir" / "realization.csv").is_file()
        assert (tmp_path / "envdir" / "truth.json").is_file()

    def test_flag_beats_env_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FREQSEP_OUTPUT_DIR", str(tmp_path / "envdir"))
        assert main(["simulate", "--scenario", "identity", "--out", str(tmp_path / "flag")]) == 0
        assert (tmp_path / "flag" / "realization.csv").is_file() and not (tmp_path / "envdir").exists()

    def test_identify_with_config_file(self, sim_2x1, tmp_path, capsys):
        path, plant, _ = sim_2x1
        conf = tmp_path / "run.json"
        conf.write_text(json.dumps({"inputs": ["x1", "x2"], "outputs": ["y1"], "band": [0.3, 14.5], "threshold_value": 0.15}))
        code = main(["identify", str(path), "--inputs", "bogus", "--outputs", "alsobogus", "--threshold", "0.9",
                     "--config", str(conf), "--out", str(tmp_path / "o")])
        assert code == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["parameters"]["threshold_value"] == 0.15 and summary["inputs"] == ["x1", "x2"]
        assert "x1->y1: 8 matched lines" in capsys.readouterr().out

    def test_identify_fit_flag_and_timestamp(self, tmp_path):
        plant = scenario("pitch-4x1", 2)
        write_realization_csv(tmp_path / "d.csv", simulate(plant))
        code = main(["identify", str(tmp_path / "d.csv"), "--inputs", "x1,x2,x3,x4", "--outputs", "y",
                     "--band", "0.2", "12", "--fit", "x1:y:9:1:1", "--timestamp", "--out", str(tmp_path / "o")])
        assert code == 0
        est = json.loads((tmp_path / "o" / "estimates" / "x1__y.json").read_text())
        assert est["fit"]["astatism"] == 1 and len(est["fit"]["a"]) == 10
        assert "generated" in json.loads((tmp_path / "o" / "summary.json").read_text())

    def test_scan(self, sim_2x1, tmp_path):
        path, _, _ = sim_2x1
        assert main(["scan", str(path), "--channels", "x1", "--band", "0.3", "14.5", "--out", str(tmp_path / "s")]) == 0
        doc = json.loads((tmp_path / "s" / "scan_summary.json").read_text())
        assert doc["channels"]["x1"]["detected"] == 12
        assert (tmp_path / "s" / "scans" / "x1.csv").is_file()

    def test_selftest_verb(self, tmp_path, capsys):
        assert main(["selftest", "identity", "--report", str(tmp_path / "r.txt")]) == 0
        assert capsys.readouterr().out == (tmp_path / "r.txt").read_text()

    def test_errors_exit_2(self, tmp_path, capsys):
        assert main(["identify", str(tmp_path / "none.csv"), "--inputs", "x", "--outputs", "y"]) == 2
        assert "no such file" in capsys.readouterr().err
        assert main(["identify", "--inputs", "x", "--outputs", "y"]) == 2

    def test_plant_file(self, tmp_path):
        from freqsep import plant_config_to_obj

        p = tmp_path / "plant.json"
        p.write_text(json.dumps(plant_config_to_obj(scenario("identity", 3))))
        assert main(["simulate", "--plant", str(p), "--seed", "9", "--out", str(tmp_path / "o")]) == 0
        assert json.loads((tmp_path / "o" / "plant.json").read_text())["seed"] == 9
