import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h2rat import evaluation as ev
from h2rat import scenarios as sc
from h2rat import training as tr
from h2rat.errors import EmptyInputError
from h2rat.rng import RngStream


@pytest.fixture(scope="module")
def trained():
    corpus = sc.generate_corpus(sc.CorpusDefinition(), 32, RngStream(4))
    return corpus, tr.train(corpus, tr.TrainConfig(m=6, k=5, epochs=2, batch_size=8))


def test_default_thresholds_include_half():
    t = ev.default_thresholds()
    assert len(t) == 21 and t[0] == 0.0 and t[-1] == 1.0 and 0.5 in t


def test_perfect_predictor():
    labels = [0, 1, 2, 3] * 5
    for p in ev.pr_points(labels, labels, [1.0] * 20, ev.default_thresholds(), 4):
        assert p.precision == (1.0,) * 4 and p.recall == (1.0,) * 4
        assert p.macro_precision == p.macro_recall == 1.0 and not p.undefined


def test_threshold_zero_recall_is_per_class_accuracy():
    labels = [0, 0, 1, 1, 2, 2, 3, 3]
    preds = [0, 1, 1, 1, 0, 2, 3, 3]
    p = ev.pr_points(labels, preds, [0.3] * 8, [0.0], 4)[0]
    assert p.recall == (0.5, 1.0, 0.5, 1.0)
    assert p.precision == (0.5, 2 / 3, 1.0, 1.0)
    assert p.accepted == 8


def test_threshold_above_confidence_accepts_nothing():
    p = ev.pr_points([0, 1], [0, 1], [0.6, 0.7], [0.9], 2)[0]
    assert p.accepted == 0 and p.precision == (0.0, 0.0) and p.recall == (0.0, 0.0)
    assert ("precision", 0) in p.undefined and ("precision", 1) in p.undefined


def test_missing_class_recall_is_flagged():
    p = ev.pr_points([0, 0], [0, 0], [1.0, 1.0], [0.5], 2)[0]
    assert p.recall == (1.0, 0.0) and ("recall", 1) in p.undefined


def test_bad_inputs():
    with pytest.raises(EmptyInputError):
        ev.pr_points([], [], [], [0.5], 4)
    with pytest.raises(ValueError):
        ev.pr_points([0], [0], [1.0], [1.5], 4)


def test_random_predictor_recall_within_three_sigma():
    n = 4000
    labels = [i % 4 for i in range(n)]
    r = RngStream(123)
    preds = [r.randint(4) for _ in range(n)]
    p = ev.pr_points(labels, preds, [1.0] * n, [0.5], 4)[0]
    # each per-class recall is Binomial(n/4, 1/4) / (n/4); their mean has sd sqrt(p(1-p)/n)
    sigma = math.sqrt(0.25 * 0.75 / n)
    assert abs(p.macro_recall - 0.25) < 3 * sigma


@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.floats(0.25, 1.0)), min_size=1, max_size=60))
def test_pr_sweep_properties(rows):
    labels, preds, conf = zip(*rows)
    points = ev.pr_points(labels, preds, conf, ev.default_thresholds(), 4)
    for a, b in zip(points, points[1:]):
        assert b.accepted <= a.accepted
        assert all(rb <= ra for ra, rb in zip(a.recall, b.recall))
    for p in points:
        assert all(0 <= x <= 1 for x in p.precision + p.recall)
        assert p.macro_precision == pytest.approx(np.mean(p.precision), abs=1e-15)
        assert p.macro_recall == pytest.approx(np.mean(p.recall), abs=1e-15)


def test_attention_agreement_values():
    p = [np.array([0.1, 0.7, 0.2, 0.0])]
    b = [np.array([0.0, 0.5, 0.5, 0.0])]
    a = ev.attention_agreement(p, b, [(1, 2)])
    assert a.argmax_hit == 1.0
    assert a.culprit_mass == pytest.approx(0.9)
    assert a.tv_distance == pytest.approx(0.5 * (0.1 + 0.2 + 0.3))
    with pytest.raises(EmptyInputError):
        ev.attention_agreement([], [], [])


# --- evaluate ----------------------------------------------------------------


def test_evaluate_summary(trained):
    corpus, ckpt = trained
    res = ev.evaluate(ckpt, corpus.test)
    s = res.summary
    assert s["n"] == len(corpus.test) and s["threshold"] == 0.5 and s["edge_filter"]
    assert s["pr_mean_accuracy"] == pytest.approx(0.5 * (s["macro_precision"] + s["macro_recall"]))
    for key in ("attention_argmax_hit", "attention_culprit_mass", "attention_tv_distance", "correction_match"):
        assert 0.0 <= s[key] <= 1.0
    for r in res.records:
        assert r.attention[[0, 1, 2, 3, 4, 7, 8, 11, 12, 13, 14, 15]].sum() == 0.0
    with pytest.raises(EmptyInputError):
        ev.evaluate(ckpt, [])


def test_evaluate_without_filter_and_odd_threshold(trained):
    corpus, ckpt = trained
    res = ev.evaluate(ckpt, corpus.test, edge_filter=None, report_threshold=0.37)
    assert not res.summary["edge_filter"]
    assert any(p.threshold == 0.37 for p in res.points)
    assert any(r.attention[0] > 0 for r in res.records)


def test_text_outputs(trained, tmp_path):
    corpus, ckpt = trained
    res = ev.evaluate(ckpt, corpus.test)
    report = ev.format_report(res)
    assert report.startswith("threshold: 0.5")
    assert "pr-mean accuracy" in report and "classification accuracy" in report
    rows = ev.format_pr_rows(res.points).splitlines()
    assert rows[0] == "threshold,class,precision,recall" and len(rows) == 1 + 21 * 5
    metrics = dict(line.split("=", 1) for line in ev.format_metrics(res.summary).splitlines())
    assert float(metrics["threshold"]) == 0.5
    ev.dump_records(res.records, 4, 4, tmp_path / "o.jsonl", True)
    back = ev.load_records(tmp_path / "o.jsonl")
    assert len(back) == len(res.records) and back[0]["attention"] == res.records[0].attention.tolist()


# --- heatmaps ----------------------------------------------------------------


def test_one_hot_heatmap(tmp_path):
    p = np.zeros(16)
    p[6] = 1.0
    path = ev.render_heatmap(p, 4, 4, tmp_path / "h.pgm")
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n128 128\n255\n")
    img = ev.read_pgm(path)
    assert img.shape == (128, 128)
    assert np.all(img[32:64, 64:96] == 255)
    assert img.sum() == 255 * 32 * 32


def test_uniform_heatmap_is_all_white():
    img = np.frombuffer(ev.heatmap_bytes(np.full(6, 1 / 6), 2, 3, block=4).split(b"\n", 3)[3], np.uint8)
    assert np.all(img == 255) and img.size == 2 * 3 * 16


def test_heatmap_rejects_non_distributions():
    with pytest.raises(ValueError):
        ev.heatmap_bytes(np.zeros(4), 2, 2)
    with pytest.raises(ValueError):
        ev.heatmap_bytes(np.full(4, 0.25), 3, 3)


@given(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4).filter(lambda v: sum(v) > 0))
def test_heatmap_is_deterministic(v):
    p = np.array(v) / sum(v)
    assert ev.heatmap_bytes(p, 2, 2) == ev.heatmap_bytes(p.copy(), 2, 2)


# --- ablation ----------------------------------------------------------------


def test_ablation_reports_both_variants_deterministically(trained):
    corpus, _ = trained
    cfg = tr.TrainConfig(m=6, k=5, epochs=1, batch_size=8)
    a = ev.ablate_layers(corpus, cfg)
    b = ev.ablate_layers(corpus, cfg)
    assert set(a) == {"layers=1", "layers=2"} and a == b
    text = ev.format_ablation(a)
    assert "layers=1" in text and "layers=2" in text and "two-layer attention hit" in text
    same = ev.ablate_layers(corpus, replace(cfg, layers=2), layer_counts=(2, 2))
    assert list(same) == ["layers=2"]
