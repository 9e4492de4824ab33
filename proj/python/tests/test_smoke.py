import hashlib
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import surgtag

FIXTURES = Path(os.environ.get("SURGTAG_FIXTURES", Path(__file__).resolve().parents[2] / "tests" / "fixtures"))
CORPUS = FIXTURES / "corpus"

TINY = {
    "encoder": {"image_height": 8, "image_width": 8, "channels": 1, "patch_size": 4, "dim": 16, "layers": 1, "heads": 2},
    "fusion": {"max_frames": 4, "heads": 2},
    "tag_decoder": {"layers": 2, "heads": 2},
    "text_decoder": {"heads": 2, "max_len": 8},
}
QUADRANTS = ["top left", "top right", "bottom left", "bottom right"]


def oracle_ap(scores, truth):
    # Mean over positives of precision at that positive's rank; ties keep input order.
    positives = [i for i, t in enumerate(truth) if t]
    if not positives:
        return None
    total = 0.0
    for i in positives:
        upto = [j for j in range(len(scores)) if scores[j] > scores[i] or (scores[j] == scores[i] and j <= i)]
        total += sum(truth[j] for j in upto) / len(upto)
    return total / len(positives)


def quadrant_image(code, rng):
    img = rng.uniform(0.0, 0.3, size=(8, 8))
    for q in range(4):
        if code >> q & 1:
            y, x = divmod(q, 2)
            img[4 * y : 4 * y + 4, 4 * x : 4 * x + 4] = rng.uniform(0.7, 1.0, size=(4, 4))
    return img.astype(np.float32)


def quadrant_vocab():
    vocab = surgtag.TagVocabulary()
    for name in QUADRANTS:
        vocab.add(name)
    return vocab


def test_errors_are_value_errors():
    assert issubclass(surgtag.ConfigError, surgtag.SurgtagError)
    assert issubclass(surgtag.SurgtagError, ValueError)
    with pytest.raises(surgtag.ConfigError):
        surgtag.lr_at(0, 0, "pretrain", {"no_such_key": 1})


def test_normalize_and_hashed_embedding():
    assert surgtag.normalize_tag("  Grasper ") == "grasper"
    v = np.array(surgtag.hashed_embedding("grasper", 32))
    assert v.shape == (32,)
    assert math.isclose(float(np.linalg.norm(v)), 1.0, rel_tol=1e-6)
    assert surgtag.hashed_embedding("grasper", 32) == surgtag.hashed_embedding("grasper", 32)


def test_sha256_matches_hashlib():
    for data in [b"", b"abc", bytes(range(256)) * 5]:
        assert surgtag.sha256_hex(data) == hashlib.sha256(data).hexdigest()


def test_label_engine_on_the_canonical_sentence():
    gaz = surgtag.Gazetteer()
    gaz.add("instrument", "hook")
    gaz.add("verb", "dissect")
    gaz.add("target", "cystic artery")
    sentence = "We use the hook to dissect the cystic artery."
    tags = {t for t, _, _, _ in surgtag.extract_entities(sentence, gaz)}
    assert tags == {"hook", "cystic artery"}
    assert surgtag.extract_actions(sentence, gaz) == [("hook", "dissect", "cystic artery")]
    assert surgtag.lemmatize_verb("dissecting") == "dissect"


def test_corpus_vocabulary_and_dataset_match_golden(tmp_path):
    transcripts = sorted((CORPUS / "transcripts").glob("*.json"))
    gaz = surgtag.Gazetteer.read_tsv(CORPUS / "gazetteer.tsv")
    vocab, stats = surgtag.build_vocabulary(transcripts, gaz, 3, CORPUS / "stoplist.txt")
    assert vocab.to_tsv() == (CORPUS / "golden" / "vocab.tsv").read_text()
    assert stats["sentences"] == 20
    jsonl, dstats, _ = surgtag.build_dataset(transcripts, CORPUS / "frames", vocab)
    assert jsonl == (CORPUS / "golden" / "dataset.jsonl").read_text()
    assert dstats["samples_out"] == 14


def test_average_precision_and_f_beta_against_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(1, 12))
        scores = [float(s) for s in rng.integers(0, 5, size=n) / 4]
        truth = [int(t) for t in rng.integers(0, 2, size=n)]
        got = surgtag.average_precision(scores, truth)
        want = oracle_ap(scores, truth)
        assert (got is None) == (want is None)
        if want is not None:
            assert got == pytest.approx(want, abs=1e-12)
    assert surgtag.f_beta(0.6, 0.6, 0.5) == 0.6
    p, r, b = 0.8, 0.4, 0.5
    assert surgtag.f_beta(p, r, b) == pytest.approx((1 + b * b) * p * r / (b * b * p + r))


def test_evaluate_matches_pinned_report():
    rows = [json.loads(line) for line in (FIXTURES / "eval" / "records.jsonl").read_text().splitlines() if line]
    vocab = surgtag.TagVocabulary.read_tsv(FIXTURES / "eval" / "vocab.tsv")
    report = surgtag.evaluate([r["scores"] for r in rows], [r["truth"] for r in rows], vocab)
    expected = json.loads((FIXTURES / "eval" / "expected_report.json").read_text())
    assert report["threshold"] == pytest.approx(expected["threshold"])
    assert report["map"] == pytest.approx(expected["map"])
    assert report["micro"]["tp"] == expected["micro"]["tp"]
    choice = surgtag.search_threshold([r["scores"] for r in rows], [r["truth"] for r in rows])
    assert choice["f"] == pytest.approx(expected["micro"]["f"])


def test_lr_schedule_endpoints():
    cfg = {"warmup_steps": 10, "warmup_lr": 1e-6, "init_lr": 1e-4, "min_lr": 5e-7, "lr_decay": 0.9}
    assert surgtag.lr_at(0, 0, "pretrain", cfg) == pytest.approx(1e-6)
    assert surgtag.lr_at(10, 0, "pretrain", cfg) == pytest.approx(1e-4)
    assert surgtag.lr_at(10_000, 200, "pretrain", cfg) == pytest.approx(5e-7)


def test_inference_shapes_union_and_extension():
    model = surgtag.Model.create(TINY, quadrant_vocab(), seed=7)
    rng = np.random.default_rng(0)
    frames = [quadrant_image(code, rng) for code in (1, 2, 4, 8)]

    image = model.infer_image(frames[0])
    assert len(image["logits"]) == 4
    for logit, prob in zip(image["logits"], image["probabilities"]):
        assert prob == pytest.approx(1 / (1 + math.exp(-logit)), rel=1e-6)

    model.reset_counters()
    model.infer_video(frames)
    assert model.decode_calls == 1
    model.reset_counters()
    threshold = float(np.median([model.infer_image(f)["probabilities"] for f in frames]))
    model.reset_counters()
    union = model.infer_video_imagewise(frames, threshold)
    assert model.decode_calls == len(frames)
    expected = sorted(set().union(*(model.infer_image(f, threshold)["selected"] for f in frames)))
    assert union["selected"] == expected

    before = model.infer_video(frames)["logits"]
    model.extend_vocabulary(["clip applier", "suction"])
    after = model.infer_video(frames)
    assert len(after["logits"]) == 6
    assert after["logits"][:4] == before

    with pytest.raises(surgtag.ConfigError, match="8x8x1"):
        model.infer_image(np.zeros((6, 8), dtype=np.float32))


def test_training_learns_quadrants_and_round_trips(tmp_path):
    rng = np.random.default_rng(5)
    (tmp_path / "frames").mkdir()
    lines = []
    for i in range(24):
        code = 1 + i % 15
        ref = f"frames/s{i}.pgm"
        surgtag.write_pnm(quadrant_image(code, rng), tmp_path / ref)
        tags = [QUADRANTS[q] for q in range(4) if code >> q & 1]
        lines.append(json.dumps({"sample_id": f"s{i}", "frame_refs": [ref], "text": "we see " + " and ".join(tags),
                                 "tags": tags, "split": "pretrain"}))
    (tmp_path / "data.jsonl").write_text("\n".join(lines) + "\n")
    train_cfg = {"epochs": 60, "batch_size": 8, "init_lr": 3e-3, "warmup_lr": 1e-4, "warmup_steps": 10,
                 "min_lr": 1e-5, "lr_decay": 0.99, "weight_decay": 0.0, "caption_weight": 0.5, "seed": 9}
    result = surgtag.train(tmp_path / "data.jsonl", tmp_path / "run", quadrant_vocab(), TINY, train_cfg)
    steps = result["steps"]
    assert len(steps) == 180
    assert steps[-1]["tag_loss"] < 0.5 * steps[0]["tag_loss"]

    model = surgtag.Model.load(result["checkpoint"])
    assert model.vocabulary.names() == QUADRANTS
    hits = 0
    for code in range(1, 16):
        got = set(model.infer_image(quadrant_image(code, rng))["tags"])
        hits += got == {QUADRANTS[q] for q in range(4) if code >> q & 1}
    assert hits >= 12
