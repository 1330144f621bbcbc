"""CLI matrix: exit codes, output artifacts, determinism, table round trip.

Driven through the built binary (env EARCONV_CLI). The python extension
(dir in EARCONV_PYDIR) is used to fabricate special checkpoints.
"""

import os
import re
import subprocess
import sys
from pathlib import Path

import pytest

CLI = os.environ["EARCONV_CLI"]
PYDIR = os.environ.get("EARCONV_PYDIR")
if PYDIR:
    sys.path.insert(0, PYDIR)


def run(*args, env_extra=None):
    env = dict(os.environ)
    env.pop("EARCONV_SEED", None)
    env.setdefault("EARCONV_THREADS", "2")
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [CLI, *map(str, args)], capture_output=True, text=True, env=env
    )


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    res = run("synth", "--out", out, "--count", 16, "--size", 32, "--seed", 3)
    assert res.returncode == 0, res.stderr
    return out / "manifest.csv"


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    res = run(
        "train", "--manifest", corpus, "--out", out, "--arch", "earnet-small",
        "--epochs", 2, "--batch", 4, "--seed", 11,
    )
    assert res.returncode == 0, res.stderr
    return out


def test_synth_writes_corpus(corpus):
    assert corpus.exists()
    lines = corpus.read_text().splitlines()
    assert lines[0] == "image_path,label,subject_id"
    assert len(lines) == 17
    assert (corpus.parent / "img_0000.png").exists()


def test_train_banner_echoes_defaults(corpus, tmp_path):
    res = run("train", "--manifest", corpus, "--out", tmp_path, "--dry-run")
    assert res.returncode == 0, res.stderr
    banner = res.stdout.splitlines()[0]
    for token in ("lr=0.001", "epochs=100", "batch=32", "dropout=0.2"):
        assert token in banner, banner


def test_train_env_seed_fallback(corpus, tmp_path):
    res = run(
        "train", "--manifest", corpus, "--out", tmp_path, "--dry-run",
        env_extra={"EARCONV_SEED": "777"},
    )
    assert res.returncode == 0
    assert "seed=777" in res.stdout


def test_train_writes_all_artifacts(trained):
    assert (trained / "checkpoint.earconv").exists()
    log = (trained / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,train_loss,train_acc,test_acc"
    assert len(log) == 3
    assert (trained / "eval_report.json").exists()


def test_invalid_config_exits_2(corpus, tmp_path):
    assert run("train", "--manifest", corpus, "--out", tmp_path,
               "--epochs", 0).returncode == 2
    assert run("train", "--manifest", corpus, "--out", tmp_path,
               "--arch", "vgg").returncode == 2
    assert run("nonsense").returncode == 2


def test_data_errors_exit_3(tmp_path, trained):
    missing = tmp_path / "missing.csv"
    assert run("train", "--manifest", missing, "--out", tmp_path).returncode == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("image_path,label\nx.png,7\n")
    assert run("train", "--manifest", bad, "--out", tmp_path).returncode == 3
    not_image = tmp_path / "fake.png"
    not_image.write_text("not a png")
    res = run("predict", "--image", not_image,
              "--checkpoint", trained / "checkpoint.earconv")
    assert res.returncode == 3


def test_single_class_eval_exits_3(corpus, trained, tmp_path):
    lines = corpus.read_text().splitlines()
    one_class = [lines[0]] + [l for l in lines[1:] if l.split(",")[1] == "1"]
    lopsided = tmp_path / "one_class.csv"
    lopsided.write_text("\n".join(one_class) + "\n")
    # images live next to the original manifest
    body = lopsided.read_text().replace("img_", str(corpus.parent) + "/img_")
    lopsided.write_text(body)
    res = run("eval", "--manifest", lopsided,
              "--checkpoint", trained / "checkpoint.earconv")
    assert res.returncode == 3
    assert "single class" in res.stderr


def test_checkpoint_errors_exit_4(corpus, tmp_path):
    broken = tmp_path / "broken.earconv"
    broken.write_bytes(b"EARCONV1" + b"\x00" * 4)
    res = run("eval", "--manifest", corpus, "--checkpoint", broken)
    assert res.returncode == 4


def test_predict_output_format(corpus, trained):
    image = corpus.parent / "img_0000.png"
    res = run("predict", "--image", image,
              "--checkpoint", trained / "checkpoint.earconv")
    assert res.returncode == 0, res.stderr
    m = re.fullmatch(
        r"female (\d\.\d{6}) male (\d\.\d{6}) -> (female|male)\s*",
        res.stdout,
    )
    assert m, res.stdout
    p0, p1 = float(m.group(1)), float(m.group(2))
    assert abs(p0 + p1 - 1.0) < 1e-5
    again = run("predict", "--image", image,
                "--checkpoint", trained / "checkpoint.earconv")
    assert again.stdout == res.stdout


def test_predict_tie_rule(tmp_path, corpus):
    # A zeroed classifier head gives exactly 0.5/0.5; the tie predicts male.
    import earconv as ec
    import numpy as np

    model = ec.build_earnet_small(seed=1)
    model.set_param("Dense.weights", np.zeros((16, 2), dtype=np.float32))
    model.set_param("Dense.bias", np.zeros(2, dtype=np.float32))
    ckpt = tmp_path / "tie.earconv"
    model.save(str(ckpt))
    res = run("predict", "--image", corpus.parent / "img_0001.png",
              "--checkpoint", ckpt)
    assert res.returncode == 0, res.stderr
    assert res.stdout.startswith("female 0.500000 male 0.500000 -> male")


def test_eval_is_byte_deterministic(corpus, trained, tmp_path):
    out = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        res = run("eval", "--manifest", corpus,
                  "--checkpoint", trained / "checkpoint.earconv",
                  "--json", path)
        assert res.returncode == 0, res.stderr
        out.append(path.read_bytes())
    assert out[0] == out[1]
    import json

    report = json.loads(out[0])
    counts = sum(report["confusion"][0]) + sum(report["confusion"][1])
    assert counts == 16
    assert set(report) == {"confusion", "accuracy", "per_class", "roc", "auc"}


def test_train_is_byte_deterministic(corpus, tmp_path):
    blobs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        res = run("train", "--manifest", corpus, "--out", out,
                  "--arch", "earnet-small", "--epochs", 2, "--batch", 4,
                  "--seed", 21)
        assert res.returncode == 0, res.stderr
        blobs.append(
            (
                (out / "checkpoint.earconv").read_bytes(),
                (out / "eval_report.json").read_bytes(),
                (out / "train_log.csv").read_bytes(),
            )
        )
    assert blobs[0] == blobs[1]


def test_featuremaps(corpus, trained, tmp_path):
    from PIL import Image

    image = corpus.parent / "img_0002.png"
    res = run("featuremaps", "--image", image,
              "--checkpoint", trained / "checkpoint.earconv",
              "--layers", "Conv1,Conv7", "--out", tmp_path)
    assert res.returncode == 0, res.stderr
    # Reduced model: Conv1 maps are 14x14 with 64 channels -> 8x8 grid;
    # Conv7 maps are 1x1 with 8 channels -> one 8-wide row.
    with Image.open(tmp_path / "Conv1.png") as im:
        assert im.size == (8 * 14, 8 * 14)
    with Image.open(tmp_path / "Conv7.png") as im:
        assert im.size == (8 * 1, 1 * 1)

    res2 = run("featuremaps", "--image", image,
               "--checkpoint", trained / "checkpoint.earconv",
               "--layers", "Conv1", "--out", tmp_path / "again")
    assert res2.returncode == 0
    assert (tmp_path / "Conv1.png").read_bytes() == \
        (tmp_path / "again" / "Conv1.png").read_bytes()


def test_featuremaps_unknown_layer_lists_valid_names(corpus, trained, tmp_path):
    res = run("featuremaps", "--image", corpus.parent / "img_0000.png",
              "--checkpoint", trained / "checkpoint.earconv",
              "--layers", "Conv99", "--out", tmp_path)
    assert res.returncode == 2
    assert "Conv1" in res.stderr and "Conv7" in res.stderr


def test_featuremaps_constant_channels_render_midgray(tmp_path, corpus):
    # Zeroed stem conv: all Conv1 channels are constant zero -> mid-gray.
    import earconv as ec
    import numpy as np
    from PIL import Image

    model = ec.build_earnet_small(seed=2)
    model.set_param("Conv1.weights", np.zeros((5, 5, 3, 64), dtype=np.float32))
    model.set_param("Conv1.bias", np.zeros(64, dtype=np.float32))
    ckpt = tmp_path / "zero_stem.earconv"
    model.save(str(ckpt))
    res = run("featuremaps", "--image", corpus.parent / "img_0003.png",
              "--checkpoint", ckpt, "--layers", "Conv1", "--out", tmp_path)
    assert res.returncode == 0, res.stderr
    with Image.open(tmp_path / "Conv1.png") as im:
        values = set(im.getdata())
    assert values == {128}


def test_inspect_prints_the_layer_table():
    res = run("inspect", "--arch", "earnet")
    assert res.returncode == 0
    out = res.stdout
    assert "Total params: 2,280,578" in out
    assert re.search(r"Conv_2D_1 \(Conv1\)\s+\(None, 126, 126, 512\)\s+38,912", out)
    assert re.search(r"Conv_2D_2 \(Conv2\)\s+\(None, 126, 126, 256\)\s+1,179,904", out)
    assert "(None, 256, 256, 3)" in out
    assert "(None, 64)" in out and "(None, 128)" in out and "(None, 2)" in out


def test_inspect_round_trips_to_the_layer_specs():
    """The printed table parses back into the exact layer-spec list."""
    import earconv as ec

    res = run("inspect", "--arch", "earnet")
    rows = []
    for line in res.stdout.splitlines():
        m = re.match(
            r"(?P<display>\S.*?) \((?P<id>[A-Za-z0-9_]+)\)\s+"
            r"\(None(?:, (?P<dims>[\d, ]+))?\)\s+(?P<params>[\d,]+)\s*(?P<cfg>.*)$",
            line,
        )
        if not m:
            continue
        dims = [int(d) for d in m.group("dims").split(",")] if m.group("dims") else []
        cfg = m.group("cfg").strip()
        inputs = []
        hyper = cfg
        if "<-" in cfg:
            hyper, _, links = cfg.partition("<-")
            hyper = hyper.strip()
            inputs = [s.strip() for s in links.split("+")]
        row = {
            "display": m.group("display"),
            "id": m.group("id"),
            "shape": dims,
            "params": int(m.group("params").replace(",", "")),
            "inputs": inputs,
            "hyper": hyper,
        }
        rows.append(row)

    model = ec.build_earnet(seed=0)
    table = model.layer_table()
    assert len(rows) == len(table)
    by_index = {r["id"]: i for i, r in enumerate(rows)}
    for parsed, spec in zip(rows, table):
        assert parsed["id"] == spec["id"]
        assert parsed["display"] == spec["display"]
        assert parsed["shape"] == list(spec["output_shape"])
        assert parsed["params"] == spec["params"]
        assert [by_index[i] for i in parsed["inputs"]] == list(spec["inputs"])
        if spec["kind"] in ("conv", "maxpool"):
            k, s, pad = spec["kernel"], spec["stride"], spec["padding"]
            assert parsed["hyper"] == f"{k}x{k} s{s} {pad}"
        elif spec["kind"] == "dense":
            assert parsed["hyper"] == "128 -> 2"
        elif spec["kind"] == "dropout":
            assert parsed["hyper"] == "rate 0.2"
        else:
            assert parsed["hyper"] == ""


def test_inspect_checkpoint_mode(trained):
    res = run("inspect", "--checkpoint", trained / "checkpoint.earconv")
    assert res.returncode == 0
    assert "Total params: 40,018" in res.stdout


def test_synth_is_byte_deterministic(tmp_path):
    for name in ("s1", "s2"):
        res = run("synth", "--out", tmp_path / name, "--count", 4,
                  "--size", 16, "--seed", 9)
        assert res.returncode == 0, res.stderr
    for f in ("manifest.csv", "img_0000.png", "img_0003.png"):
        assert (tmp_path / "s1" / f).read_bytes() == \
            (tmp_path / "s2" / f).read_bytes()


def test_subject_disjoint_training_runs(corpus, tmp_path):
    res = run(
        "train", "--manifest", corpus, "--out", tmp_path, "--arch",
        "earnet-small", "--epochs", 1, "--batch", 4, "--seed", 2,
        "--subject-disjoint",
    )
    assert res.returncode == 0, res.stderr
    assert "subject_disjoint=on" in res.stdout
    assert (tmp_path / "checkpoint.earconv").exists()


def test_full_architecture_predict_and_featuremaps(corpus, tmp_path):
    # One slow full-size pass: grid cells for the stem conv are 126x126.
    import earconv as ec
    from PIL import Image

    ckpt = tmp_path / "full.earconv"
    ec.build_earnet(seed=6).save(str(ckpt))
    image = corpus.parent / "img_0004.png"

    res = run("featuremaps", "--image", image, "--checkpoint", ckpt,
              "--layers", "Conv1,Conv7", "--out", tmp_path)
    assert res.returncode == 0, res.stderr
    with Image.open(tmp_path / "Conv1.png") as im:
        assert im.size == (8 * 126, 8 * 126)
    with Image.open(tmp_path / "Conv7.png") as im:
        assert im.size == (8 * 4, 8 * 4)  # 64 cells of 4x4

    pred = run("predict", "--image", image, "--checkpoint", ckpt)
    assert pred.returncode == 0, pred.stderr
    assert re.fullmatch(
        r"female \d\.\d{6} male \d\.\d{6} -> (female|male)\s*", pred.stdout
    )
