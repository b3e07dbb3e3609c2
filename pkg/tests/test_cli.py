import csv
import json
import os
import subprocess
import sys

import pytest

from masksel.cli import main
from masksel.pipeline import ExperimentConfig
from masksel.regressor import TrainingSchedule
from masksel.simulator import SegmenterParams, SyntheticDataset, WorldConfig

TINY = ExperimentConfig(
    world=WorldConfig(height=32, width=32, min_area_fraction=0.004, seed=5),
    pool_size=80, weak_size=40, test_size=30, n_initial=15, n_total=30, beta=0.5, num_seeds=2,
    schedule=TrainingSchedule(iou_phase_epochs=15),
    segmenter=SegmenterParams(tau=30.0, scale=3.0))


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY.to_dict()))
    return str(path)


def run_cli(*argv, env=None):
    return subprocess.run([sys.executable, "-m", "masksel", *argv], capture_output=True, text=True,
                          env={**os.environ, **(env or {})})


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestBudget:
    def test_random_with_weak(self, capsys):
        assert main(["budget", "--strategy", "random", "--strong", "200", "--weak", "9118"]) == 0
        header, row = capsys.readouterr().out.splitlines()
        assert header == "strategy,n_strong,pool,n_weak,seconds,days"
        assert row.split(",")[-1] == "2.90"

    def test_mask_guided(self, capsys):
        main(["budget", "--strategy", "mask_guided", "--strong", "800", "--pool", "1464"])
        assert capsys.readouterr().out.splitlines()[1].endswith(",2.39")

    def test_pool_too_small_is_usage_error(self, capsys):
        code = main(["budget", "--strategy", "mask_guided", "--strong", "300", "--pool", "100"])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["budget", "--strategy", "random", "--strong", "1", "--colour", "red"])
        assert exc.value.code == 2


class TestGen:
    def test_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert main(["gen", "--seed", "7", "--num-images", "12", "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.stats.csv").read_bytes() == (tmp_path / "b.stats.csv").read_bytes()
        ds = SyntheticDataset.from_json(a.read_text())
        assert len(ds) == 12 and ds.world.seed == 7

    def test_seed_required(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--out", str(tmp_path / "x.json")])
        assert exc.value.code == 2

    def test_missing_config_file(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.json")
        assert main(["gen", "--seed", "1", "--config", missing, "--out", str(tmp_path / "x.json")]) == 1
        assert missing in capsys.readouterr().err


class TestSelect:
    @pytest.fixture
    def scores(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("image_id,iou_score\n1,0.1\n2,0.5\n3,0.9\n4,0.05\n")
        return str(path)

    def test_beta(self, scores, capsys):
        assert main(["select", "--scores", scores, "--beta", "0.0", "--n-prime", "2"]) == 0
        assert capsys.readouterr().out == "4\n1\n"

    def test_random_needs_seed(self, scores):
        with pytest.raises(SystemExit) as exc:
            main(["select", "--scores", scores, "--strategy", "random", "--n-prime", "2"])
        assert exc.value.code == 2

    def test_random_deterministic(self, scores, capsys):
        main(["select", "--scores", scores, "--strategy", "random", "--n-prime", "2", "--seed", "3"])
        first = capsys.readouterr().out
        main(["select", "--scores", scores, "--strategy", "random", "--n-prime", "2", "--seed", "3"])
        assert capsys.readouterr().out == first
        assert len(first.split()) == 2

    def test_missing_file(self, tmp_path, capsys):
        missing = str(tmp_path / "absent.csv")
        assert main(["select", "--scores", missing, "--n-prime", "1"]) == 1
        assert missing in capsys.readouterr().err

    def test_bad_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,score\n1,0.5\n")
        assert main(["select", "--scores", str(path), "--n-prime", "1"]) == 2


class TestRunAndSweep:
    def test_run_outputs(self, tmp_path, config_file):
        out = tmp_path / "run"
        assert main(["run", "--config", config_file, "--seed", "0", "--out", str(out)]) == 0
        rows = read_rows(out / "report.csv")
        assert [r["stage"] for r in rows] == ["seed", "seed", "mean", "std"]
        assert {r["beta"] for r in rows} == {"0.50"}
        assert len(read_rows(out / "analysis.csv")) == 2
        scores = read_rows(out / "scores" / "seed_0.csv")
        assert len(scores) == TINY.pool_size - TINY.n_initial

    def test_run_requires_seed(self, tmp_path, config_file):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--config", config_file, "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_invalid_override(self, tmp_path, config_file):
        assert main(["run", "--config", config_file, "--seed", "0", "--out", str(tmp_path),
                     "--n-total", "5"]) == 2

    def test_sweep_matches_individual_runs(self, tmp_path, config_file):
        sweep = tmp_path / "sweep"
        assert main(["sweep", "--config", config_file, "--seed", "1", "--betas", "0.2:0.6:0.2",
                     "--out", str(sweep)]) == 0
        rows = read_rows(sweep / "report.csv")
        assert [r["beta"] for r in rows if r["stage"] == "mean"] == ["", "0.20", "0.40", "0.60"]
        for beta in ("0.2", "0.4", "0.6"):
            single = tmp_path / f"run_{beta}"
            main(["run", "--config", config_file, "--seed", "1", "--beta", beta, "--out", str(single)])
            expected = read_rows(single / "report.csv")
            assert [r for r in rows if r["beta"] == f"{float(beta):.2f}"] == expected
        single = tmp_path / "run_random"
        main(["run", "--config", config_file, "--seed", "1", "--strategy", "random", "--out", str(single)])
        assert [r for r in rows if r["score_source"] == "random"] == read_rows(single / "report.csv")

    def test_full_grid_has_eleven_betas(self, tmp_path, config_file):
        out = tmp_path / "grid"
        assert main(["sweep", "--config", config_file, "--seed", "0", "--num-seeds", "1", "--no-random",
                     "--out", str(out)]) == 0
        means = [r for r in read_rows(out / "report.csv") if r["stage"] == "mean"]
        assert len(means) == 11


class TestAnalyze:
    def test_beta_rows(self, tmp_path, capsys):
        gen = tmp_path / "world.json"
        main(["gen", "--seed", "2", "--num-images", "30", "--out", str(gen)])
        ds = SyntheticDataset.from_json(gen.read_text())
        scores = tmp_path / "scores.csv"
        scores.write_text("image_id,iou_score\n" + "".join(f"{i},{(i % 10) / 10}\n" for i in ds.ids))
        assert main(["analyze", "--dataset", str(gen), "--scores", str(scores), "--betas", "0.0:1.0:0.5",
                     "--n-prime", "5"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "seed,beta,n_selected,mean_objects,mean_area_fraction"
        assert [line.split(",")[1] for line in lines[1:]] == ["0.00", "0.50", "1.00"]

    def test_missing_dataset(self, tmp_path, capsys):
        missing = str(tmp_path / "gone.json")
        assert main(["analyze", "--dataset", missing, "--scores", missing, "--n-prime", "1"]) == 1
        assert missing in capsys.readouterr().err


class TestProcess:
    def test_module_entry_and_threads(self, tmp_path, config_file):
        outputs = []
        for threads in ("1", "3"):
            out = tmp_path / f"t{threads}"
            proc = run_cli("run", "--config", config_file, "--seed", "4", "--out", str(out),
                           env={"MASKSEL_THREADS": threads})
            assert proc.returncode == 0, proc.stderr
            outputs.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
        assert outputs[0] == outputs[1]

    def test_usage_error_exit_code(self):
        proc = run_cli("frobnicate")
        assert proc.returncode == 2
        assert "usage" in proc.stderr
