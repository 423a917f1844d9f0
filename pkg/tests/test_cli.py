import hashlib
import os

import numpy as np
import pytest

from objstereo import gradsuite
from objstereo.cli import LOSS_COLUMNS, load_checkpoint, main, save_checkpoint
from objstereo.autodiff import ParamStore
from objstereo.io import write_pfm


def _digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(root), "--n", "2", "--seed", "5"]) == 0
    return root


class TestParser:
    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["eval-depth", "--pred", "a", "--gt", "b", "--bogus"])
        assert e.value.code != 0
        assert "usage:" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code != 0

    def test_method_range(self, capsys):
        with pytest.raises(SystemExit):
            main(["ablate", "--data", "d", "--out", "o", "--method", "10"])


class TestEvalDepth:
    def test_identical_directories(self, data, capsys):
        assert main(["eval-depth", "--pred", str(data), "--gt", str(data)]) == 0
        out = capsys.readouterr().out
        assert "depth abs_rel=0 sq_rel=0 rmse=0" in out

    def test_missing_prediction_names_path(self, data, tmp_path, capsys):
        (tmp_path / "000000").mkdir()
        write_pfm(tmp_path / "000000" / "disp.pfm", np.ones((128, 256)))
        assert main(["eval-depth", "--pred", str(tmp_path), "--gt", str(data)]) == 1
        assert str(tmp_path / "000001") in capsys.readouterr().err

    def test_missing_directory(self, tmp_path, capsys):
        assert main(["eval-depth", "--pred", str(tmp_path / "x"), "--gt", str(tmp_path / "y")]) == 1
        assert str(tmp_path / "x") in capsys.readouterr().err


class TestGradcheck:
    def test_exit_zero_when_all_pass(self, monkeypatch, capsys):
        rows = [gradsuite.SuiteRow("relu", 1, 1, 0.0, 0, 0.0)]
        monkeypatch.setattr(gradsuite, "run_suite", lambda *a, **k: rows)
        assert main(["gradcheck"]) == 0

    def test_exit_one_on_failure(self, monkeypatch, capsys):
        rows = [gradsuite.SuiteRow("relu", 2, 2, 0.0, 0, 0.0), gradsuite.SuiteRow("exp", 2, 1, 0.5, 0, 0.0)]
        monkeypatch.setattr(gradsuite, "run_suite", lambda *a, **k: rows)
        assert main(["gradcheck"]) == 1
        assert "FAILED: exp" in capsys.readouterr().out


class TestCheckpoint:
    def test_round_trip_and_bytes(self, tmp_path):
        store = ParamStore(dtype=np.float32)
        store.add("b.w", np.arange(6, dtype=np.float32).reshape(2, 3))
        store.add("a.bias", np.zeros(2, dtype=np.float32))
        save_checkpoint(tmp_path / "1.npz", store)
        save_checkpoint(tmp_path / "2.npz", store)
        assert _digest(tmp_path / "1.npz") == _digest(tmp_path / "2.npz")
        back = load_checkpoint(tmp_path / "1.npz")
        assert back["b.w"].data.tobytes() == store["b.w"].data.tobytes()

    def test_missing(self, tmp_path):
        with pytest.raises(Exception, match="nope.npz"):
            load_checkpoint(str(tmp_path / "nope.npz"))


class TestPipeline:
    def test_train_match_eval(self, data, tmp_path, capsys):
        run = tmp_path / "run"
        args = ["train", "--data", str(data), "--out", str(run), "--toy", "--steps", "3", "--method", "5"]
        assert main(args) == 0
        lines = (run / "loss_curve.txt").read_text().splitlines()
        assert lines[0].split() == list(LOSS_COLUMNS)
        assert [int(r.split()[0]) for r in lines[1:]] == [1, 2, 3]
        pred = tmp_path / "pred"
        assert main(["match", "--data", str(data), "--checkpoint", str(run), "--out", str(pred), "--detections"]) == 0
        assert sorted(os.listdir(pred)) == ["000000", "000001"]
        assert main(["eval-depth", "--pred", str(pred), "--gt", str(data)]) == 0
        assert main(["eval-det", "--pred", str(pred), "--gt", str(data)]) == 0
        out = capsys.readouterr().out
        assert "ap_bev easy=" in out and "ap_3d" in out
