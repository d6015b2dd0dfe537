import json
import os
import subprocess

import pytest

import unigen


def test_bleu_identity_and_range():
    ref = "let x = 1 ; return x ;".split()
    assert unigen.bleu(ref, ref) == pytest.approx(1.0)
    assert unigen.bleu([], ref) == 0.0
    assert 0.0 <= unigen.bleu("let y = 2 ;".split(), ref) < 1.0
    assert unigen.corpus_bleu([ref], [ref]) == pytest.approx(1.0)


def test_codebleu_composite_is_equal_weighted():
    hyp = unigen.tokenize("let x = 1 ; return x + 2 ;")
    ref = unigen.tokenize("let x = 1 ; return x ;")
    c = unigen.codebleu(hyp, ref)
    parts = c["ngram"] + c["weighted_ngram"] + c["syntax"] + c["dataflow"]
    assert c["composite"] == pytest.approx(parts / 4)


def test_library_errors_surface_as_value_error():
    with pytest.raises(unigen.UnigenError):
        unigen.tokenize("let x = @ ;")
    with pytest.raises(ValueError):
        unigen.generate(size=0)


def test_generation_is_deterministic_and_round_trips(tmp_path):
    a = unigen.generate(size=30, seed=3, out=str(tmp_path))
    b = unigen.generate(size=30, seed=3)
    assert a == b
    assert sum(len(a[k]) for k in ("train", "valid", "test")) == 30
    assert all(ex["m"] > ex["n"] for ex in a["train"])
    report = unigen.roundtrip_check(str(tmp_path))
    assert report["checked"] == 30 and report["passed"] == 30


@pytest.fixture(scope="module")
def backbone(tmp_path_factory):
    cli = os.environ.get("UNIGEN_CLI")
    if not cli:
        pytest.skip("UNIGEN_CLI not set")
    root = tmp_path_factory.mktemp("pipeline")
    data, out = root / "data", root / "out"
    common = ["--data", str(data), "--out", str(out), "--max-steps", "4", "--d-model", "8", "--batch-size", "4"]
    subprocess.run([cli, "gen-data", "--size", "24", "--seed", "5", "--out", str(data)], check=True)
    subprocess.run([cli, "train-teachers", *common], check=True, capture_output=True)
    subprocess.run([cli, "train-backbone", "--teachers", str(out), *common], check=True, capture_output=True)
    return data, out / "backbone.ckpt"


def test_checkpoint_decode_and_evaluate(backbone):
    data, ckpt = backbone
    m = unigen.Model.load(str(ckpt))
    assert m.stage == "backbone" and not m.has_selector
    assert m.config["d_model"] == 8
    source = json.loads((data / "test.jsonl").read_text().splitlines()[0])["nl"]
    for paradigm in ("seq", "tree"):
        out = m.decode(source, paradigm=paradigm, max_length=40)
        assert out["paradigm"] == paradigm
        assert out["status"] in ("ok", "truncated", "invalid")
    with pytest.raises(unigen.UnigenError):
        m.decode(source, paradigm="routed")
    report = m.evaluate(str(data), beam=1)
    names = [mode["mode"] for mode in report["modes"]]
    assert names == ["seq", "tree", "random", "oracle"]
    a = report["analysis"]
    assert a["win_seq"] + a["win_tree"] + a["tie"] == pytest.approx(1.0)


def test_missing_checkpoint_raises(tmp_path):
    with pytest.raises(unigen.UnigenError):
        unigen.Model.load(str(tmp_path / "nope.ckpt"))
