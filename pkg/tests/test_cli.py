import filecmp
import shutil

import numpy as np
import pytest

from dvevio.cli import main
from dvevio.dataset import POSE_HEADER, read_csv
from dvevio.experiment import aggregate, read_report
from dvevio.pipeline import INSERTIONS_HEADER, METRICS_HEADER


def test_empty_dataset_exits_nonzero(tmp_path, caplog):
    (tmp_path / "empty").mkdir()
    code = main(["run", "--dataset", str(tmp_path / "empty"), "--out", str(tmp_path / "o")])
    assert code != 0
    assert "calib.cfg" in caplog.text


def test_missing_dataset_argument(tmp_path):
    assert main(["run", "--out", str(tmp_path)]) == 2


def test_bad_mask_flag():
    with pytest.raises(SystemExit):
        main(["run", "--mask", "maybe"])


def test_simulate_writes_layout(tmp_path):
    cfg = tmp_path / "sc.cfg"
    cfg.write_text("[scenario]\nduration = 0.2\nlength_m = 1.0\n")
    assert main(["simulate", "--preset", "clean", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    for name in ("imu.csv", "ground_truth.csv", "visual.csv", "thermal.csv", "calib.cfg", "visual/000004.png"):
        assert (tmp_path / "d" / name).is_file()


@pytest.fixture(scope="module")
def single_run(small_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["run", "--dataset", str(small_dataset), "--mask", "off", "--seed", "3",
                 "--out", str(out), "--debug-masks"])
    assert code == 0
    return out


def test_run_outputs_parse(single_run):
    poses = read_csv(single_run / "pose_estimate.csv", POSE_HEADER)
    m = read_csv(single_run / "metrics.csv", METRICS_HEADER)
    read_csv(single_run / "insertions.csv", INSERTIONS_HEADER, allow_empty=True)
    assert len(poses) == len(m) > 10
    assert np.all(np.diff(m[:, 3]) >= 0)
    assert np.all(m[:, 1] > 0)
    assert "mask_enabled = false" in (single_run / "run.cfg").read_text()


def test_experiment_is_deterministic_and_report_regenerates(small_dataset, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["experiment", "--dataset", str(small_dataset), "--trials", "2",
                     "--seed", "5", "--out", str(out)]) == 0
        outs.append(out)
    a, b = outs
    csvs = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    assert len(csvs) >= 4 * 3 + 4
    _, mismatch, errors = filecmp.cmpfiles(a, b, [str(p) for p in csvs], shallow=False)
    assert not mismatch and not errors

    fresh = (a / "report.txt").read_bytes()
    (a / "report.txt").unlink()
    assert main(["report", "--out", str(a)]) == 0
    assert (a / "report.txt").read_bytes() == fresh
    rep = read_report(a / "report.txt")
    assert rep["trials"] == "2" and rep["seed_base"] == "5"


def test_identical_populations_give_p_one(small_dataset, tmp_path):
    out = tmp_path / "onon"
    assert main(["experiment", "--dataset", str(small_dataset), "--trials", "2", "--seed", "1",
                 "--out", str(out)]) == 0
    shutil.rmtree(out / "off")
    shutil.copytree(out / "on", out / "off")
    rep = aggregate(out, 2, 1)
    assert float(rep["anova_p_value"]) == 1.0
    assert rep["dopt_on_lower_count"] == "0"
