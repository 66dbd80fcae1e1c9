import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from ctbkit.cli import main
from ctbkit.dataset import (
    Dataset,
    ground_truth_as_predictions,
    parse_predictions,
    serialize_dataset,
    serialize_predictions,
)
from ctbkit.embeddings import EmbeddingConfig, assign_indices, init_extractor_weights, save_archive
from ctbkit.generator import init_generator_weights
from ctbkit.metrics import evaluate
from helpers import block_page, gt_doc, perturb_predictions, random_dataset

SMALL = ["--d", "4", "--roi", "2", "--n-index", "10", "--heads", "4", "--layers", "2"]
SMALL_CFG = EmbeddingConfig(d=4, roi=2, n_index=10)


def _write(path, data):
    path.write_bytes(data)
    return str(path)


def _detections(n, image_id="img"):
    units = [{"unit_id": f"u{k}", "polygon": [[20 * k, 10], [20 * k + 15, 10], [20 * k + 15, 25], [20 * k, 25]]} for k in range(n)]
    return json.dumps({"images": [{"image_id": image_id, "units": units, "blocks": []}]}).encode()


def _features(channels=2, seed=0):
    rng = np.random.default_rng(seed)
    return save_archive({"featmap": rng.normal(size=(channels, 8, 16)), "stride": np.array(4.0)})


def _weights(seed=None, channels=2, overrides=None):
    tensors = {**init_extractor_weights(SMALL_CFG, channels, seed=seed), **init_generator_weights(SMALL_CFG, layers=2, seed=seed)}
    for k, v in (overrides or {}).items():
        tensors[k] = v
    return save_archive(tensors)


@pytest.fixture
def infer_inputs(tmp_path):
    return {
        "pred": _write(tmp_path / "dets.json", _detections(3)),
        "features": _write(tmp_path / "feats.ctbw", _features()),
        "weights": _write(tmp_path / "w.ctbw", _weights(seed=1)),
    }


def _infer(inputs, out, *extra):
    return main(["infer", "--pred", inputs["pred"], "--features", inputs["features"], "--weights", inputs["weights"], "--out", str(out), *SMALL, *extra])


# -- evaluate ---------------------------------------------------------------


def test_evaluate_perfect(tmp_path, capsys):
    gt = random_dataset(5)
    g = _write(tmp_path / "gt.json", serialize_dataset(gt))
    p = _write(tmp_path / "pred.json", serialize_predictions(ground_truth_as_predictions(gt)))
    assert main(["evaluate", "--gt", g, "--pred", p]) == 0
    obj = json.loads(capsys.readouterr().out)
    values = [v[k] for v in obj["presets"].values() for k in ("LA", "LC", "GA")]
    assert values == [1.0] * 9
    out = tmp_path / "r.txt"
    assert main(["evaluate", "--gt", g, "--pred", p, "--out", str(out)]) == 0
    presets = out.read_text().split('"per_threshold"')[0]
    assert presets.count("1.0000") == 9


def test_evaluate_matches_library(tmp_path, capsys):
    gt = random_dataset(8, n_images=3)
    pred = perturb_predictions(np.random.default_rng(1), gt)
    g = _write(tmp_path / "gt.json", serialize_dataset(gt))
    p = _write(tmp_path / "pred.json", serialize_predictions(pred))
    assert main(["evaluate", "--gt", g, "--pred", p]) == 0
    assert capsys.readouterr().out == evaluate(gt, pred).to_text() + "\n"


def test_evaluate_iou_alias(tmp_path, capsys):
    gt = random_dataset(2)
    g = _write(tmp_path / "gt.json", serialize_dataset(gt))
    p = _write(tmp_path / "pred.json", serialize_predictions(ground_truth_as_predictions(gt)))
    assert main(["evaluate", "--gt", g, "--pred", p, "--iou", "coco"]) == 0
    assert list(json.loads(capsys.readouterr().out)["presets"]) == ["0.5:0.05:0.95"]


def test_evaluate_malformed_pred(tmp_path, capsys):
    g = _write(tmp_path / "gt.json", serialize_dataset(random_dataset(1)))
    p = _write(tmp_path / "pred.json", b"{not json")
    assert main(["evaluate", "--gt", g, "--pred", p]) == 1
    assert "parse error" in capsys.readouterr().err


def test_evaluate_invalid_pred(tmp_path, capsys):
    g = _write(tmp_path / "gt.json", serialize_dataset(random_dataset(1)))
    doc = gt_doc([{"image_id": "img0", "units": [], "blocks": [{"block_id": 0, "units": ["ghost"]}]}])
    p = _write(tmp_path / "pred.json", doc)
    assert main(["evaluate", "--gt", g, "--pred", p]) == 2
    assert "ghost" in capsys.readouterr().err


def test_missing_file_and_missing_flag(tmp_path, capsys):
    assert main(["evaluate", "--gt", str(tmp_path / "nope.json"), "--pred", str(tmp_path / "nope.json")]) == 1
    assert main(["evaluate", "--gt", str(tmp_path / "nope.json")]) == 1
    assert "--pred is required" in capsys.readouterr().err


# -- stats / validate -------------------------------------------------------


def test_stats_small(tmp_path, capsys):
    page = block_page("p", [(0, 0), (500, 0)], lines=1, words=3)
    g = _write(tmp_path / "gt.json", serialize_dataset(Dataset((page,))))
    assert main(["stats", "--gt", g]) == 0
    out = capsys.readouterr().out
    assert "# integral per block: 3.00" in out and "# block per image: 2.00" in out


@pytest.mark.slow
def test_stats_rects_counts(tmp_path, capsys):
    n_units, n_blocks, n_images = 440027, 107754, 20000
    per_image = np.full(n_images, n_blocks // n_images)
    per_image[: n_blocks % n_images] += 1
    per_block = np.full(n_blocks, n_units // n_blocks)
    per_block[: n_units % n_blocks] += 1
    images, k = [], 0
    for i in range(n_images):
        units, blocks = [], []
        for b in range(per_image[i]):
            ids = []
            for _ in range(per_block[k]):
                uid = len(units)
                x, y = (uid % 20) * 10, (uid // 20) * 10
                units.append({"unit_id": uid, "polygon": [[x, y], [x + 8, y], [x + 8, y + 8], [x, y + 8]]})
                ids.append(uid)
            blocks.append({"block_id": b, "units": ids})
            k += 1
        images.append({"image_id": i, "width": 400, "height": 400, "units": units, "blocks": blocks})
    g = _write(tmp_path / "gt.json", gt_doc(images))
    assert main(["stats", "--gt", g]) == 0
    out = capsys.readouterr().out
    assert "# integral per block: 4.08" in out
    assert "# integral per image: 22.00" in out
    assert "# block per image: 5.39" in out


def test_validate(tmp_path, capsys):
    gt = random_dataset(3)
    g = _write(tmp_path / "gt.json", serialize_dataset(gt))
    assert main(["validate", "--gt", g]) == 0
    assert capsys.readouterr().out == "ok\n"
    doc = json.loads(serialize_dataset(gt))
    doc["images"][0]["units"][0]["polygon"][1][0] = doc["images"][0]["width"] + 3
    bad = _write(tmp_path / "bad.json", json.dumps(doc).encode())
    before = (tmp_path / "bad.json").read_bytes()
    assert main(["validate", "--gt", bad]) == 2
    assert "x outside" in capsys.readouterr().out
    assert (tmp_path / "bad.json").read_bytes() == before


# -- group-baseline ---------------------------------------------------------


def test_group_baseline_ga_one(tmp_path, capsys):
    page = block_page("p", [(100, 100), (900, 150), (400, 1200)], lines=2, words=3)
    ds = Dataset((page,))
    g = _write(tmp_path / "gt.json", serialize_dataset(ds))
    out = tmp_path / "pred.json"
    assert main(["group-baseline", "--gt", g, "--out", str(out)]) == 0
    first = out.read_bytes()
    assert main(["group-baseline", "--gt", g, "--out", str(out)]) == 0
    assert out.read_bytes() == first
    assert main(["evaluate", "--gt", g, "--pred", str(out)]) == 0
    obj = json.loads(capsys.readouterr().out)
    assert all(v["GA"] == 1.0 for v in obj["presets"].values())


def test_group_baseline_from_detections(tmp_path):
    d = _write(tmp_path / "dets.json", _detections(4))
    out = tmp_path / "pred.json"
    assert main(["group-baseline", "--pred", d, "--out", str(out)]) == 0
    p = parse_predictions(out.read_bytes())
    assert sorted(u for b in p.images[0].blocks for u in b.units) == ["u0", "u1", "u2", "u3"]


# -- infer ------------------------------------------------------------------


def test_infer_deterministic(tmp_path, infer_inputs):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _infer(infer_inputs, a, "--seed", "7") == 0
    assert _infer(infer_inputs, b, "--seed", "7") == 0
    assert a.read_bytes() == b.read_bytes()
    parse_predictions(a.read_bytes())


def test_infer_zero_weights(tmp_path):
    inputs = {
        "pred": _write(tmp_path / "dets.json", _detections(5)),
        "features": _write(tmp_path / "feats.ctbw", _features()),
        "weights": _write(tmp_path / "w.ctbw", _weights()),
    }
    out = tmp_path / "o.json"
    # every token predicts class 0: with seed 0 nobody holds index 0, so no edges
    assert assign_indices(5, 10, 0) == (4, 7, 2, 3, 5)
    assert _infer(inputs, out) == 0
    blocks = [b.units for b in parse_predictions(out.read_bytes()).images[0].blocks]
    assert blocks == [("u0",), ("u1",), ("u2",), ("u3",), ("u4",)]
    # with seed 1, u1 holds index 0 and every token points at it
    assert assign_indices(5, 10, 1)[1] == 0
    assert _infer(inputs, out, "--seed", "1") == 0
    first = out.read_bytes()
    blocks = [b.units for b in parse_predictions(first).images[0].blocks]
    assert blocks == [("u0", "u1", "u2", "u3", "u4")]
    assert _infer(inputs, out, "--seed", "1") == 0
    assert out.read_bytes() == first


def test_infer_crafted_chain(tmp_path):
    seed = 3
    idx = assign_indices(2, 10, seed)
    bias = np.zeros(11)
    bias[idx[1]] = 10.0  # every token points at b; b points at itself
    inputs = {
        "pred": _write(tmp_path / "dets.json", _detections(2)),
        "features": _write(tmp_path / "feats.ctbw", _features()),
        "weights": _write(tmp_path / "w.ctbw", _weights(overrides={"iph.b": bias})),
    }
    out = tmp_path / "o.json"
    assert _infer(inputs, out, "--seed", str(seed)) == 0
    p = parse_predictions(out.read_bytes())
    assert [b.units for b in p.images[0].blocks] == [("u0", "u1")]


def test_infer_capacity(tmp_path, capsys):
    inputs = {
        "pred": _write(tmp_path / "dets.json", _detections(11)),
        "features": _write(tmp_path / "feats.ctbw", _features()),
        "weights": _write(tmp_path / "w.ctbw", _weights()),
    }
    assert _infer(inputs, tmp_path / "o.json") == 2
    assert "exceed" in capsys.readouterr().err
    assert not (tmp_path / "o.json").exists()


def test_infer_shape_mismatch(tmp_path, infer_inputs):
    infer_inputs["features"] = _write(tmp_path / "f3.ctbw", _features(channels=3))
    assert _infer(infer_inputs, tmp_path / "o.json") == 2


def test_infer_missing_tensor(tmp_path, infer_inputs):
    w = init_generator_weights(SMALL_CFG, layers=2)
    infer_inputs["weights"] = _write(tmp_path / "w.ctbw", save_archive(w))
    assert _infer(infer_inputs, tmp_path / "o.json") == 2


def test_infer_bad_archive(tmp_path, infer_inputs):
    infer_inputs["weights"] = _write(tmp_path / "w.ctbw", b"garbage")
    assert _infer(infer_inputs, tmp_path / "o.json") == 1


def test_infer_per_image_features(tmp_path):
    rng = np.random.default_rng(0)
    doc = {"images": [json.loads(_detections(2, "a"))["images"][0], json.loads(_detections(3, "b"))["images"][0]]}
    feats = save_archive(
        {
            "featmap.a": rng.normal(size=(2, 8, 16)),
            "stride.a": np.array(4.0),
            "featmap": rng.normal(size=(2, 8, 16)),
            "stride": np.array(4.0),
        }
    )
    inputs = {
        "pred": _write(tmp_path / "dets.json", json.dumps(doc).encode()),
        "features": _write(tmp_path / "f.ctbw", feats),
        "weights": _write(tmp_path / "w.ctbw", _weights(seed=2)),
    }
    out = tmp_path / "o.json"
    assert _infer(inputs, out) == 0
    assert [im.image_id for im in parse_predictions(out.read_bytes()).images] == ["a", "b"]


def test_console_script():
    exe = shutil.which("ctbkit")
    cmd = [exe] if exe else [sys.executable, "-m", "ctbkit.cli"]
    res = subprocess.run(cmd + ["--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("validate", "stats", "evaluate", "group-baseline", "infer"):
        assert name in res.stdout
