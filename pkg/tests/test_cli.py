import json
import subprocess
import sys

import numpy as np
import pytest

from sgnet.cli import run
from sgnet.data import save_raw_tensor, write_idx_labels
from sgnet.serialize import load_model

TRAIN = ["train", "--epochs", "1", "--limit-train", "32", "--limit-test", "16", "--no-timing",
         "--channels", "4,4,4"]


@pytest.fixture
def trained(toy_data, tmp_path):
    model = tmp_path / "m.sgn"
    code, out = run(TRAIN + ["--data", str(toy_data), "--out", str(model), "--seed", "1"])
    assert code == 0
    return toy_data, model, out


def test_train_emits_one_metrics_line_and_model(trained):
    _, model, out = trained
    lines = out.splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert list(rec) == ["epoch", "train_loss", "test_acc", "seconds"]
    assert rec["epoch"] == 1 and 0 <= rec["test_acc"] <= 1 and rec["seconds"] is None
    assert load_model(model).config.seed == 1


def test_train_repeat_identical(trained, tmp_path):
    data, model, out = trained
    m2, metrics = tmp_path / "m2.sgn", tmp_path / "metrics.jsonl"
    code, stdout = run(TRAIN + ["--data", str(data), "--out", str(m2), "--seed", "1", "--metrics", str(metrics)])
    assert code == 0 and stdout == ""
    assert metrics.read_text() == out
    assert m2.read_bytes() == model.read_bytes()


def test_seed_before_command_is_equivalent(trained, tmp_path):
    data, model, out = trained
    m2 = tmp_path / "m2.sgn"
    code, out2 = run(["--seed", "1"] + TRAIN + ["--data", str(data), "--out", str(m2)])
    assert code == 0 and out2 == out and m2.read_bytes() == model.read_bytes()


def test_human_output(toy_data, tmp_path):
    code, out = run(TRAIN + ["--data", str(toy_data), "--out", str(tmp_path / "m.sgn"), "--human"])
    assert code == 0 and out.startswith("epoch   1  loss ")


def test_env_data_dir(toy_data, tmp_path, monkeypatch):
    monkeypatch.setenv("SGN_DATA_DIR", str(toy_data))
    code, _ = run(TRAIN + ["--out", str(tmp_path / "m.sgn")])
    assert code == 0


@pytest.mark.parametrize("argv,code", [
    (["train", "--bogus"], 2),
    (["train", "--mode", "diagonal"], 2),
    (["train", "--extremum", "maxima"], 2),
    (["train", "--sg-layers", "1,x"], 2),
    (["train", "--sg-layers", "5"], 2),
    (["train", "--sg-layers", "none", "--mha"], 2),
    (["train", "--patch", "1"], 2),
    (["train", "--mha", "--mha-heads", "3"], 2),
    (["train", "--batch-size", "1"], 2),
    (["train", "--aggregate", "median"], 2),
    ([], 2),
])
def test_flag_errors_exit_2(argv, code, tmp_path):
    out = tmp_path / "never.sgn"
    assert run(argv + (["--out", str(out)] if argv and argv[0] == "train" else []))[0] == code
    assert not out.exists()


def test_missing_data_dir_exit_3(tmp_path):
    out = tmp_path / "m.sgn"
    assert run(["train", "--data", str(tmp_path / "absent"), "--out", str(out)])[0] == 3
    assert not out.exists()


def test_missing_output_dir_exit_2(toy_data, tmp_path):
    assert run(TRAIN + ["--data", str(toy_data), "--out", str(tmp_path / "no" / "m.sgn")])[0] == 2


def test_eval_output_and_repeat(trained):
    data, model, _ = trained
    code, out = run(["eval", "--model", str(model), "--data", str(data)])
    assert code == 0
    rec = json.loads(out)
    assert set(rec) == {"test_acc", "n"} and rec["n"] == 20 and 0 <= rec["test_acc"] <= 1
    assert run(["eval", "--model", str(model), "--data", str(data)]) == (0, out)


def test_eval_class_mismatch_exit_2(trained, tmp_path):
    data, model, _ = trained
    assert run(["eval", "--model", str(model), "--data", str(data), "--classes", "5"])[0] == 2
    # labels beyond the model's class range are also a mismatch
    write_idx_labels(data / "t10k-labels-idx1-ubyte", [11] * 20)
    assert run(["eval", "--model", str(model), "--data", str(data)])[0] == 2


@pytest.mark.parametrize("damage", ["truncate", "flip", "magic"])
def test_corrupted_model_exit_3(trained, tmp_path, damage):
    data, model, _ = trained
    buf = bytearray(model.read_bytes())
    if damage == "truncate":
        buf = buf[: len(buf) // 2]
    elif damage == "flip":
        buf[-1] ^= 1
    else:
        buf[:4] = b"ZZZZ"
    bad = tmp_path / "bad.sgn"
    bad.write_bytes(bytes(buf))
    assert run(["eval", "--model", str(bad), "--data", str(data)])[0] == 3


def test_embed_width_and_determinism(trained, tmp_path):
    _, model, _ = trained
    m = load_model(model)
    img = tmp_path / "img.sgt"
    save_raw_tensor(img, np.random.default_rng(0).random((28, 28)))
    code, out = run(["embed", "--model", str(model), "--image", str(img)])
    vec = json.loads(out)
    assert code == 0 and len(vec) == m.classifier_input_width
    assert run(["embed", "--model", str(model), "--image", str(img)]) == (0, out)
    bad = tmp_path / "small.sgt"
    save_raw_tensor(bad, np.zeros((12, 12)))
    assert run(["embed", "--model", str(model), "--image", str(bad)])[0] == 2


def test_embed_zero_image_untrained_model(toy_data, tmp_path):
    # zero input gives zero activations only while conv bias, BN shift and running mean are zero
    model, img = tmp_path / "m.sgn", tmp_path / "zero.sgt"
    assert run(["train", "--epochs", "0", "--data", str(toy_data), "--out", str(model)])[0] == 0
    save_raw_tensor(img, np.zeros((28, 28)))
    code, out = run(["embed", "--model", str(model), "--image", str(img)])
    m = load_model(model)
    vec = np.array(json.loads(out))
    assert code == 0 and not np.any(vec[m.segment_slices()["sg1"]])


def test_graph_dump_and_ppm(tmp_path):
    img, ppm = tmp_path / "map.sgt", tmp_path / "g.ppm"
    save_raw_tensor(img, np.random.default_rng(0).random((12, 12)))
    code, out = run(["graph", "--image", str(img), "--patch", "6", "--mode", "horizontal", "--ppm", str(ppm)])
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "mode=h extremum=max patch=6"
    assert sum(ln.startswith("node") for ln in lines) == 4
    assert sum(ln.startswith("edge") for ln in lines) == 2
    assert ppm.read_bytes().startswith(b"P6\n96 96\n255\n")
    assert run(["graph", "--image", str(img), "--patch", "6"]) == (0, out)
    code, vout = run(["graph", "--image", str(img), "--mode", "vertical", "--extremum", "min"])
    assert vout.splitlines()[0] == "mode=v extremum=min patch=6"


def test_graph_layer_needs_model(trained, tmp_path):
    _, model, _ = trained
    img = tmp_path / "img.sgt"
    save_raw_tensor(img, np.random.default_rng(0).random((28, 28)))
    assert run(["graph", "--image", str(img), "--layer", "1"])[0] == 2
    code, out = run(["graph", "--image", str(img), "--layer", "2", "--model", str(model), "--patch", "3"])
    assert code == 0 and sum(ln.startswith("node") for ln in out.splitlines()) == 25
    assert run(["graph", "--image", str(img), "--layer", "4", "--model", str(model)])[0] == 2


def test_verify_default_and_forced_failure():
    code, out = run(["verify", "--only", "laplacian_MtM_identity", "--only", "node_selection_oracle"])
    recs = [json.loads(ln) for ln in out.splitlines()]
    assert code == 0 and {r["property"]: r["result"] for r in recs} == {
        "laplacian_MtM_identity": "pass", "node_selection_oracle": "pass"}
    code, out = run(["verify", "--only", "grad_conv", "--force-fail", "grad_conv"])
    assert code != 0 and json.loads(out)["result"] == "fail"
    assert run(["verify", "--force-fail", "no_such_property"])[0] == 2


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "sgnet.cli", "verify", "--only", "laplacian_MtM_identity"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and '"result": "pass"' in out.stdout


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_4_and_no_model(toy_data, tmp_path):
    out = tmp_path / "m.sgn"
    argv = ["train", "--data", str(toy_data), "--epochs", "2", "--batch-size", "8", "--lr", "1e30",
            "--channels", "4,4,4", "--out", str(out)]
    assert run(argv)[0] == 4
    assert not out.exists()
