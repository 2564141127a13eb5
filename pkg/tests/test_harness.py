import csv
import io

import numpy as np
import pytest

from haiteam.harness.cli import main
from haiteam.harness.config import (
    ConfigError,
    ExperimentConfig,
    derive_seed,
    dump_config,
    from_dict,
    load_config,
)
from haiteam.harness.runner import run_experiment
from haiteam.harness.tables import fmt_cell, rows_to_csv, summarize_rows, summary_to_text

TINY = [
    "repetitions=2",
    "dataset.n=240",
    "dataset.d=3",
    "dataset.l=4",
    "train.epochs=6",
    "train.lambda_grid=[0.0]",
    "train.hidden=4",
    "train.router_hidden=4",
    "systems=[Human, AO, TS, JC, JCP]",
]


def tiny(tmp_path, extra=()):
    cfg = load_config(None, TINY + list(extra), env={})
    cfg.output_dir = str(tmp_path / "out")
    return cfg


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.train.lr == 1e-3 and cfg.train.batch_size == 64
        assert cfg.train.lambda_grid == [0.0, 0.2, 0.4, 0.6, 0.8]

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="train.nope"):
            from_dict({"train": {"nope": 1}})

    def test_type_errors_name_the_path(self):
        with pytest.raises(ConfigError, match="train.epochs"):
            from_dict({"train": {"epochs": "many"}})

    def test_invalid_value(self):
        with pytest.raises(ConfigError):
            from_dict({"train": {"joint_init": "sometimes"}})
        with pytest.raises(ConfigError):
            from_dict({"systems": ["AO", "Robot"]})

    def test_override_and_env(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("name: x\ntrain:\n  epochs: 7\n")
        cfg = load_config(path, ["train.lr=0.01"], env={"HAITEAM_OUTPUT_DIR": "elsewhere"})
        assert (cfg.train.epochs, cfg.train.lr, cfg.output_dir) == (7, 0.01, "elsewhere")

    def test_bad_override(self):
        with pytest.raises(ConfigError):
            load_config(None, ["train.missing=1"], env={})
        with pytest.raises(ConfigError):
            load_config(None, ["novalue"], env={})

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "none.yaml")

    def test_dump_roundtrip(self):
        import yaml

        cfg = load_config(None, ["experts.rho=[0.5, 0.9]"], env={})
        assert from_dict(yaml.safe_load(dump_config(cfg))) == cfg

    def test_sweep_variants(self):
        cfg = from_dict({"sweep": [{"label": "a", "set": {"experts.cost": 0.0}}, {"label": "b", "set": {"train.hidden": 2}}]})
        v = dict(cfg.variants())
        assert v["a"].experts.cost == 0.0 and v["b"].train.hidden == 2 and v["b"].experts.cost == 0.3

    def test_cost_list_length(self):
        with pytest.raises(ConfigError):
            from_dict({"experts": {"rho": [0.6, 0.7], "cost": [0.1]}})

    def test_shipped_configs_load(self):
        from pathlib import Path

        for path in sorted(Path(__file__).resolve().parents[1].joinpath("configs").glob("*.yaml")):
            load_config(path, env={})

    def test_derive_seed(self):
        assert derive_seed(3, "log") == derive_seed(3, "log")
        assert len({derive_seed(3, t) for t in ("log", "split", "train")}) == 3
        assert derive_seed(3, "log") != derive_seed(4, "log")


class TestTables:
    ROWS = [
        {"variant": "base", "system": s, "dataset": "synthetic", "cost": "0.3", "repetition": r, "seed": r,
         "n_test": 10, "total": t, "raw": t, "cost_paid": 0.0, "human_fraction": 0.0, "routed_algorithm": 10,
         "routed_experts": "0|0"}
        for s, vals in (("AO", (4.0, 6.0)), ("JC", (7.0, 7.0))) for r, t in enumerate(vals)
    ]

    def test_cell_format(self):
        assert fmt_cell(423.25, 5.24) == "423.2±5.2"
        assert fmt_cell(3.0, None) == "3.0"

    def test_summary(self):
        s = {x["system"]: x for x in summarize_rows(self.ROWS)}
        assert s["AO"]["mean"] == 5.0 and s["AO"]["stderr"] == pytest.approx(1.0)
        assert s["JC"]["cell"] == "7.0±0.0"

    def test_csv_header_and_rows(self):
        parsed = list(csv.DictReader(io.StringIO(rows_to_csv(self.ROWS))))
        assert len(parsed) == 4 and parsed[0]["total"] == "4.0"

    def test_text_layout(self):
        text = summary_to_text(summarize_rows(self.ROWS))
        head, body = text.splitlines()
        assert head.split() == ["AO", "JC"] and body.split() == ["base", "5.0±1.0", "7.0±0.0"]


class TestRun:
    def test_pipeline_writes_outputs(self, tmp_path):
        out = run_experiment(tiny(tmp_path))
        files = out["files"]
        for key in ("results", "summary_csv", "summary_txt", "config", "fig_summary", "fig_routing"):
            assert files[key].exists(), key
        rows = list(csv.DictReader(open(files["results"])))
        assert len(rows) == 2 * 5
        assert {r["system"] for r in rows} == {"Human", "AO", "TS", "JC", "JCP"}
        for r in rows:
            total, raw, paid = float(r["total"]), float(r["raw"]), float(r["cost_paid"])
            assert total == pytest.approx(raw - paid)
        human = [r for r in rows if r["system"] == "Human"]
        assert all(float(r["human_fraction"]) == 1.0 for r in human)

    def test_same_seed_same_bytes(self, tmp_path):
        a = run_experiment(tiny(tmp_path / "a"))["files"]["results"].read_bytes()
        b = run_experiment(tiny(tmp_path / "b"))["files"]["results"].read_bytes()
        assert a == b

    def test_different_seed_differs(self, tmp_path):
        a = run_experiment(tiny(tmp_path / "a"), write=False)["rows"]
        b = run_experiment(tiny(tmp_path / "b", ["seed=5"]), write=False)["rows"]
        assert [r["total"] for r in a] != [r["total"] for r in b]

    def test_compliance_figure(self, tmp_path):
        cfg = tiny(tmp_path, ["dataset.source=compliance-2d", "experts.kind=rule", "experts.rho=[1.0]",
                              "systems=[AO, TS, JC]"])
        assert run_experiment(cfg)["files"]["fig_compliance"].exists()

    def test_file_source(self, tmp_path):
        data = tmp_path / "d.txt"
        assert main(["gen-data", "--n", "200", "--d", "3", "--l", "4", "--out", str(data)]) == 0
        cfg = tiny(tmp_path, ["dataset.source=file", f"dataset.path={data}", "systems=[AO]"])
        rows = run_experiment(cfg, write=False)["rows"]
        assert rows[0]["dataset"] == "d.txt" and rows[0]["n_test"] == 60


class TestCli:
    def test_run(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("\n".join(f"{k.split('=')[0]}: {k.split('=')[1]}" for k in TINY if "." not in k.split("=")[0]) + "\n")
        args = ["run", str(cfg), "--output-dir", str(tmp_path / "o")]
        for t in TINY:
            if "." in t.split("=")[0]:
                args += ["-s", t]
        assert main(args) == 0
        out = capsys.readouterr().out
        assert "JCP" in out and "results written" in out
        assert (tmp_path / "o" / "figures" / "summary.png").exists()

    def test_gen_data_with_log(self, tmp_path, capsys):
        assert main(["gen-data", "--n", "50", "--out", str(tmp_path / "d.txt"), "--log-out", str(tmp_path / "log.csv")]) == 0
        assert "logged decisions" in capsys.readouterr().out
        assert (tmp_path / "log.csv").read_text().count("\n") > 40

    def test_save_models_and_eval(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(f"output_dir: {tmp_path / 'o'}\nsave_models: true\nsystems: [AO]\n")
        sets = [x for t in TINY if t.split("=")[0] not in ("systems",) for x in ("-s", t)]
        assert main(["run", str(cfg)] + sets) == 0
        model = tmp_path / "o" / "models" / "base" / "rep00_AO.npz"
        assert model.exists()
        capsys.readouterr()
        assert main(["eval", str(model), "--config", str(cfg)] + sets) == 0
        line = capsys.readouterr().out.splitlines()[1]
        ran = (tmp_path / "o" / "results.csv").read_text().splitlines()[1]
        assert line == ran

    def test_grid_lambda(self, tmp_path, capsys):
        sets = [x for t in TINY for x in ("-s", t)]
        cfg = tmp_path / "c.yaml"
        cfg.write_text("name: g\n")
        assert main(["grid-lambda", str(cfg), "--grid", "0.0", "0.4"] + sets) == 0
        out = capsys.readouterr().out
        lines = out.splitlines()
        assert lines[0] == "lambda,estimate"
        assert [l.split(",")[0] for l in lines[1:3]] == ["0", "0.4"]
        assert lines[3].startswith("selected lambda: ")

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("train:\n  epochs: lots\n")
        assert main(["run", str(cfg)]) == 2
        assert "train.epochs" in capsys.readouterr().err

    def test_missing_config_exit_code(self, tmp_path):
        assert main(["run", str(tmp_path / "none.yaml")]) == 3
