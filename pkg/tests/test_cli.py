import subprocess
import sys

import numpy as np
import pytest

from edenvfi import build_model
from edenvfi.checks import TINY_CHECK_CONFIG
from edenvfi.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, run_cli
from edenvfi.imageio import read_image, write_image
from edenvfi.weights import save_weights

from oracles import model_count


@pytest.fixture(scope="module")
def weights(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "tiny.bin"
    save_weights(build_model(TINY_CHECK_CONFIG, seed=0), path)
    return path


@pytest.fixture
def inputs(tmp_path):
    imgs = np.random.default_rng(0).random((5, 3, 20, 28))
    paths = []
    for i, name in enumerate(["in0", "in1", "in2", "in3", "gt"]):
        paths.append(tmp_path / "q" / f"{name}.png")
        paths[-1].parent.mkdir(exist_ok=True)
        write_image(paths[-1], imgs[i])
    return paths


@pytest.mark.parametrize("argv", [["--help"], ["bench", "--help"], ["interpolate", "--help"]])
def test_help(argv, capsys):
    assert run_cli(argv) == EXIT_OK
    assert "usage" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["--bogus"], ["params", "--depths", "9"], ["params", "--depths", "-1,2"],
                                  ["train-toy", "--steps", "-3", "--out", "x"], ["bench", "--width", "0", "--height", "9"],
                                  ["gradcheck", "--op", "nope"]])
def test_usage_errors(argv):
    assert run_cli(argv) == EXIT_USAGE


@pytest.mark.parametrize("argv,depths,pvt,cnn", [
    ([], (9, 12), True, True), (["--depths", "3,4"], (3, 4), True, True), (["--no-pvt"], (9, 12), False, True),
])
def test_params(argv, depths, pvt, cnn, capsys):
    assert run_cli(["params", *argv]) == EXIT_OK
    assert int(capsys.readouterr().out) == model_count(depths, pvt, cnn)


def test_params_rejects_disabling_both():
    assert run_cli(["params", "--no-pvt", "--no-cnn"]) == EXIT_NUMERIC


class TestInterpolate:
    def test_writes_output(self, weights, inputs, tmp_path):
        out = tmp_path / "mid.ppm"
        assert run_cli(["interpolate", "--weights", str(weights), "--inputs", *map(str, inputs[:4]),
                        "--output", str(out)]) == EXIT_OK
        assert read_image(out).shape == (3, 20, 28)

    def test_missing_input_names_file(self, weights, inputs, tmp_path, capsys):
        inputs[2].unlink()
        code = run_cli(["interpolate", "--weights", str(weights), "--inputs", *map(str, inputs[:4]),
                        "--output", str(tmp_path / "o.png")])
        assert code == EXIT_IO and "in2.png" in capsys.readouterr().err

    def test_mismatched_sizes(self, weights, inputs, tmp_path):
        write_image(inputs[3], np.zeros((3, 10, 10)))
        assert run_cli(["interpolate", "--weights", str(weights), "--inputs", *map(str, inputs[:4]),
                        "--output", str(tmp_path / "o.png")]) == EXIT_IO

    def test_bad_output_extension(self, weights, inputs, tmp_path):
        assert run_cli(["interpolate", "--weights", str(weights), "--inputs", *map(str, inputs[:4]),
                        "--output", str(tmp_path / "o.jpg")]) == EXIT_USAGE

    def test_corrupt_weights(self, inputs, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"nope")
        assert run_cli(["interpolate", "--weights", str(bad), "--inputs", *map(str, inputs[:4]),
                        "--output", str(tmp_path / "o.png")]) == EXIT_IO


def test_eval(weights, inputs, capsys):
    assert run_cli(["eval", "--dataset", str(inputs[0].parent.parent), "--weights", str(weights)]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("q\t") and lines[-1].startswith("mean\t")
    assert float(lines[0].split("\t")[1]) == float(lines[-1].split("\t")[1])


def test_eval_empty_dataset(weights, tmp_path):
    assert run_cli(["eval", "--dataset", str(tmp_path), "--weights", str(weights)]) == EXIT_IO


def test_train_toy_history(tmp_path, capsys):
    hist, out = tmp_path / "h.csv", tmp_path / "w.bin"
    assert run_cli(["train-toy", "--steps", "2", "--size", "32", "--out", str(out), "--history", str(hist)]) == EXIT_OK
    lines = hist.read_text().splitlines()
    assert lines[0] == "step,loss,lr" and [ln.split(",")[0] for ln in lines[1:]] == ["1", "2"]
    assert float(lines[1].split(",")[2]) == 5e-4
    assert out.is_file() and "validation" in capsys.readouterr().err


def test_train_toy_stdout(tmp_path, capsys):
    assert run_cli(["train-toy", "--steps", "0", "--size", "32", "--out", str(tmp_path / "w.bin")]) == EXIT_OK
    assert capsys.readouterr().out == "step,loss,lr\n"


def test_gradcheck_single(capsys):
    assert run_cli(["gradcheck", "--op", "edsc"]) == EXIT_OK
    assert "edsc" in capsys.readouterr().out


def test_gradcheck_impossible_tolerance():
    assert run_cli(["gradcheck", "--op", "linear", "--tolerance", "0"]) == EXIT_NUMERIC


def test_bench(weights, capsys):
    assert run_cli(["bench", "--width", "32", "--height", "32", "--weights", str(weights), "--csv"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "runtime" in out and "width,height,runs" in out


def test_bench_too_few_runs(weights):
    assert run_cli(["bench", "--width", "32", "--height", "32", "--runs", "2", "--weights", str(weights)]) == EXIT_NUMERIC


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "edenvfi", "params", "--depths", "0,0", "--no-cnn"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and int(res.stdout) == model_count((0, 0), True, False)
