import json

import numpy as np
import pytest

from greit_hrnet.cli import main
from greit_hrnet.formats import encode_raw, save_weights
from greit_hrnet.network import arch_config, build_network
from greit_hrnet.posedecode import gaussian_target


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_count_text_and_json(capsys):
    code, out, err = run(capsys, "count", "--arch", "greit18", "--input", "256x192")
    assert code == 0 and err == ""
    assert "1143865" in out and "0.271 G" in out
    code, out, _ = run(capsys, "count", "--arch", "lite18", "--format", "json", "--per-layer")
    d = json.loads(out)
    assert code == 0 and 1.08e6 <= d["total_params"] <= 1.18e6 and d["rows"]
    code2, out2, _ = run(capsys, "count", "--arch", "lite18", "--format", "json", "--per-layer")
    assert out2 == out


def test_count_with_config(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"arch": "greit30"}))
    code, out, _ = run(capsys, "count", "--config", str(cfg), "--format", "json")
    assert code == 0 and json.loads(out)["total_params"] > 1.7e6
    cfg.write_text(json.dumps({"arch": "greit30", "bogus": 1}))
    code, out, err = run(capsys, "count", "--config", str(cfg))
    assert code == 2 and out == "" and "bogus" in err


def test_growth(capsys):
    code, out, _ = run(capsys, "growth", "--method", "ccw", "--format", "json")
    rows = json.loads(out)["rows"]
    assert code == 0 and [r["channels"] for r in rows] == [120, 280, 600]
    code, out, _ = run(capsys, "growth", "--method", "gcw")
    assert code == 0 and "480" in out


def test_usage_errors_exit_1(capsys):
    for argv in [[], ["count", "--arch", "nope"], ["count", "--input", "12"], ["frobnicate"],
                 ["infer", "--arch", "greit18"], ["gradcheck", "--block", "mlp"],
                 ["count", "--batch", "0"]]:
        code, out, err = run(capsys, *argv)
        assert code == 1, argv
        assert out == "" and err


def test_gradcheck_single_block(capsys):
    code, out, _ = run(capsys, "gradcheck", "--block", "gsw", "--seed", "1", "--format", "json")
    rows = json.loads(out)
    assert code == 0 and len(rows) == 3 and all(r["max_rel_err"] < 1e-4 for r in rows)


@pytest.fixture(scope="module")
def infer_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("infer")
    net = build_network(arch_config("greit18"), init="random", seed=0)
    save_weights(net, d / "w.grwt")
    img = np.stack([gaussian_target((60, 80), 10.0, 160, 120)] * 3).astype(np.float32)
    (d / "person.raw").write_bytes(encode_raw(img))
    return d


@pytest.mark.parametrize("flip", [False, True])
def test_infer_writes_keypoint_json(infer_files, capsys, flip):
    out_path = infer_files / f"kp{int(flip)}.json"
    argv = ["infer", "--arch", "greit18", "--weights", str(infer_files / "w.grwt"),
            "--image", str(infer_files / "person.raw"), "--box", "30,20,60,120",
            "--out", str(out_path)] + (["--flip"] if flip else [])
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    (rec,) = json.loads(out_path.read_text())
    assert rec["image_id"] == "person"
    assert len(rec["keypoints"]) == 17 * 3 and all(np.isfinite(rec["keypoints"]))
    assert rec["box"] == [15.0, 20.0, 90.0, 120.0]   # widened to 4:3 about the center
    assert rec["meta"]["flip"] is flip


def test_infer_data_errors_exit_2(infer_files, tmp_path, capsys):
    lite = tmp_path / "lite.grwt"
    save_weights(build_network(arch_config("lite18")), lite)
    base = ["infer", "--image", str(infer_files / "person.raw"), "--box", "0,0,10,10",
            "--out", str(tmp_path / "o.json")]
    code, _, err = run(capsys, *base, "--weights", str(lite))
    assert code == 2 and "parameter names differ" in err
    code, _, err = run(capsys, *base, "--weights", str(tmp_path / "missing.grwt"))
    assert code == 2
    code, _, err = run(capsys, "infer", "--weights", str(infer_files / "w.grwt"),
                       "--image", str(infer_files / "person.raw"), "--box", "0,0,0,10",
                       "--out", str(tmp_path / "o.json"))
    assert code == 2 and "degenerate" in err


def test_eval_roundtrip(infer_files, tmp_path, capsys):
    preds = infer_files / "kp0.json"
    if not preds.exists():
        pytest.skip("infer output missing")
    recs = json.loads(preds.read_text())
    gt = [dict(r, keypoints=[v if i % 3 != 2 else 2 for i, v in enumerate(r["keypoints"])],
               area=5000.0) for r in recs]
    (tmp_path / "gt.json").write_text(json.dumps(gt))
    code, out, _ = run(capsys, "eval", "--preds", str(preds), "--gt", str(tmp_path / "gt.json"),
                       "--metric", "oks", "--format", "json")
    assert code == 0 and json.loads(out) == {"AP": 1.0, "AP50": 1.0, "AP75": 1.0, "AR": 1.0}
    for g in gt:
        g["head_size"] = 10.0
    (tmp_path / "gt.json").write_text(json.dumps(gt))
    code, out, _ = run(capsys, "eval", "--preds", str(preds), "--gt", str(tmp_path / "gt.json"),
                       "--metric", "pckh", "--format", "json")
    assert code == 0 and json.loads(out)["PCKh"] == 100.0


def test_eval_data_errors(tmp_path, capsys):
    (tmp_path / "p.json").write_text("[]")
    (tmp_path / "g.json").write_text(json.dumps([{"image_id": 1, "keypoints": [0, 0, 2]}]))
    code, _, err = run(capsys, "eval", "--preds", str(tmp_path / "p.json"),
                       "--gt", str(tmp_path / "g.json"), "--metric", "pckh")
    assert code == 2 and "no prediction" in err
    code, _, err = run(capsys, "eval", "--preds", str(tmp_path / "p.json"),
                       "--gt", str(tmp_path / "g.json"))
    assert code == 2 and "falloff" in err
    (tmp_path / "g17.json").write_text(json.dumps([{"image_id": 1, "keypoints": [0, 0, 2] * 17}]))
    code, _, err = run(capsys, "eval", "--preds", str(tmp_path / "p.json"),
                       "--gt", str(tmp_path / "g17.json"))
    assert code == 2 and "area" in err


def test_eval_k_consts_from_config(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"k_consts": [1.0]}))
    (tmp_path / "g.json").write_text(json.dumps([{"image_id": 1, "keypoints": [0, 0, 2], "area": 1.0}]))
    (tmp_path / "p.json").write_text(json.dumps([{"image_id": 1, "keypoints": [0, 0, 1], "score": 1}]))
    code, out, err = run(capsys, "eval", "--preds", str(tmp_path / "p.json"), "--gt",
                         str(tmp_path / "g.json"), "--config", str(tmp_path / "cfg.json"),
                         "--format", "json")
    assert code == 0, err
    assert json.loads(out)["AP"] == 1.0
