"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured values;
the lines are repeated in the terminal summary.
"""

import math
import struct
import time
from dataclasses import replace

import numpy as np
import pytest

from h2rat import evaluation as ev
from h2rat import numerics as nx
from h2rat import scenarios as sc
from h2rat import training as tr
from h2rat.attention import AttentionLayerParams, CorrectionTable, H2ratParams, forward
from h2rat.errors import ChecksumError, FormatError, ShapeMismatchError, TruncatedError, VersionError
from h2rat.model import ModelDims, init_params
from h2rat.rng import RngStream
from h2rat.textenc import tokenize
from h2rat.vision import EdgeFilterSpec, apply_edge_filter, rim_mask
from oracles import central_differences, loss_np, max_rel_error, stepwise_attention

RESULTS = []


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
    RESULTS.append(line)
    print("\n" + line)
    return ok


def _random_model(seed, m, k, rows, cols, f, vocab, layers=2):
    dims = ModelDims(vocab=vocab, m=m, k=k, f=f, rows=rows, cols=cols, classes=4, layers=layers)
    params = init_params(dims, RngStream(seed))
    gen = np.random.default_rng(seed)
    for name, value in params.items():
        params[name] = value + 0.3 * gen.standard_normal(value.shape)
    return dims, params


def _random_head(r, m, k, scale):
    layers = [
        AttentionLayerParams(
            *(nx.Tensor(scale * r.standard_normal(s)) for s in ((k, m), (k, m), (k, 1), (1, k), (1, 1)))
        )
        for _ in range(2)
    ]
    return H2ratParams(layers, nx.Tensor(scale * r.standard_normal((4, m))), nx.Tensor(scale * r.standard_normal((4, 1))))


# ---------------------------------------------------------------------------


def test_gradient_oracle():
    start = time.perf_counter()
    worst = 0.0
    configs = 50
    for seed in range(configs):
        r = np.random.default_rng(seed)
        rows, cols = [(1, 1), (1, 3), (2, 2), (2, 3), (3, 3), (1, 9), (3, 2), (2, 4)][seed % 8]
        m, k, f, vocab = int(r.integers(2, 9)), int(r.integers(2, 7)), int(r.integers(2, 7)), 6
        dims, P = _random_model(seed, m, k, rows, cols, f, vocab, layers=2)
        tokens = tuple(int(t) for t in r.integers(0, vocab, size=int(r.integers(1, 6))))
        F = r.standard_normal((f, rows * cols))
        label = int(r.integers(0, 4))
        _, analytic, _ = tr.batch_loss_and_grads(P, dims, [tr.Example(tokens, F, label)])
        numeric = central_differences(
            lambda p: loss_np(p, tokens, F, label, 2), {n: v.copy() for n, v in P.items()}, eps=1e-5
        )
        worst = max(worst, max_rel_error(analytic, numeric, floor=1e-6))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60
    assert verdict(1, ok, f"{configs} configs, max relative error {worst:.2e} (< 1e-4), {elapsed:.1f} s (< 60 s)")


def test_stepwise_composition_oracle():
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        params = _random_head(r, 4, 3, 1.0)
        V = nx.Tensor(np.tanh(r.standard_normal((4, 4))))
        R = nx.Tensor(r.standard_normal((4, 1)))
        out = forward(V, R, params)
        ps, vs, us, p_ans = stepwise_attention(V, R, params)
        pairs = [(out.p_1, ps[0]), (out.v_1, vs[0]), (out.u_1, us[0]), (out.p_2, ps[1]),
                 (out.v_2, vs[1]), (out.u_2, us[1]), (out.p_ans, p_ans)]
        worst = max(worst, max(float(np.abs(a.data - b.data).max()) for a, b in pairs))
    assert verdict(2, worst <= 1e-12, f"20 cases, max deviation {worst:.1e} (<= 1e-12)")


def test_distribution_invariants():
    worst_sum, min_entry = 0.0, 0.0
    rng = np.random.default_rng(2024)
    spec = EdgeFilterSpec()
    for i in range(1000):
        scale = [0.1, 1.0, 3.0, 10.0][i % 4]
        rows, cols = [(3, 3), (4, 4), (3, 5), (5, 4)][(i // 4) % 4]
        m, k = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        params = _random_head(rng, m, k, scale)
        V = nx.Tensor(np.tanh(scale * rng.standard_normal((m, rows * cols))))
        R = nx.Tensor(scale * rng.standard_normal((m, 1)))
        out = forward(V, R, params)
        filtered = apply_edge_filter(out.p_2, rows, cols, spec)
        for p in (out.p_1.data, out.p_2.data, out.p_ans.data, filtered.data):
            worst_sum = max(worst_sum, abs(p.sum() - 1.0))
            min_entry = min(min_entry, float(p.min()))
    table_rows = list(sc.default_correction_table().entries.values())
    for i in range(200):
        w = rng.random(int(rng.integers(1, 8))) + 1e-3
        table = CorrectionTable({(0, 0): list(enumerate(w / w.sum()))})
        table_rows.extend(table.entries.values())
    for dist in table_rows:
        probs = np.array([p for _, p in dist])
        worst_sum = max(worst_sum, abs(probs.sum() - 1.0))
        min_entry = min(min_entry, float(probs.min()))
    ok = worst_sum <= 1e-9 and min_entry >= 0
    assert verdict(3, ok, f"1000 forward samples + {len(table_rows)} table rows, max |sum-1| {worst_sum:.1e}, min entry {min_entry:.1e}")


def test_permutation_equivariance():
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        d = int(r.integers(2, 10))
        params = _random_head(r, 5, 4, 1.0)
        V = nx.Tensor(np.tanh(r.standard_normal((5, d))))
        R = nx.Tensor(r.standard_normal((5, 1)))
        perm = r.permutation(d)
        a = forward(V, R, params)
        b = forward(nx.Tensor(V.data[:, perm]), R, params)
        worst = max(
            worst,
            float(np.abs(a.p_1.data[perm] - b.p_1.data).max()),
            float(np.abs(a.p_2.data[perm] - b.p_2.data).max()),
            float(np.abs(a.p_ans.data - b.p_ans.data).max()),
        )
    assert verdict(4, worst <= 1e-12, f"20 cases, max deviation {worst:.1e} (<= 1e-12)")


def test_memorization():
    start = time.perf_counter()
    corpus = sc.generate_corpus(replace(sc.CorpusDefinition(), split_ratio=1.0), 32, RngStream(0))
    cfg = tr.TrainConfig(epochs=500, stop_loss=0.05, select="last", patience=10**6)
    first = tr.train(corpus, cfg)
    second = tr.train(corpus, cfg)
    elapsed = time.perf_counter() - start
    examples = tr.prepare(corpus.train, corpus.vocab)
    model = first.model()
    loss, acc = tr.mean_loss(model, examples), tr.accuracy(model, examples)
    same = tr.encode_checkpoint(first) == tr.encode_checkpoint(second)
    epochs = first.metadata["epochs_run"]
    ok = loss < 0.05 and acc == 1.0 and epochs <= 500 and same and elapsed < 300
    assert verdict(
        5, ok,
        f"32 samples, loss {loss:.4f} (< 0.05), train acc {acc:.3f}, {epochs} epochs, "
        f"reproducible={same}, {elapsed:.0f} s for two runs (< 300 s)",
    )


@pytest.mark.slow
def test_learning_at_scale():
    corpus = sc.generate_corpus(sc.CorpusDefinition(), 2000, RngStream(0))
    ckpt = tr.train(corpus, tr.TrainConfig())
    res = ev.evaluate(ckpt, corpus.test)
    acc = res.summary["classification_accuracy"]
    hit = res.summary["attention_argmax_hit"]
    ok = acc >= 0.90 and hit >= 0.75
    assert verdict(
        6, ok,
        f"test accuracy {acc:.4f} (>= 0.90), filtered argmax hit {hit:.4f} (>= 0.75), "
        f"pr-mean {res.summary['pr_mean_accuracy']:.4f}, selected epoch {ckpt.metadata['selected_epoch']}",
    )


def test_evaluation_oracle():
    labels = [i % 4 for i in range(400)]
    perfect = ev.pr_points(labels, labels, [1.0] * 400, ev.default_thresholds(), 4)
    perfect_ok = all(p.precision == (1.0,) * 4 and p.recall == (1.0,) * 4 for p in perfect)
    n = 4000
    labels = [i % 4 for i in range(n)]
    r = RngStream(7)
    preds = [r.randint(4) for _ in range(n)]
    conf = r.uniform(n, 0.25, 1.0)
    recall = ev.pr_points(labels, preds, conf, [0.0], 4)[0].macro_recall
    sigma = math.sqrt(0.25 * 0.75 / n)
    ok = perfect_ok and abs(recall - 0.25) <= 3 * sigma
    assert verdict(
        7, ok,
        f"perfect predictor P=R=1 at all thresholds: {perfect_ok}; random macro recall {recall:.4f} "
        f"(0.25 +/- {3 * sigma:.4f})",
    )


def test_serialization(tmp_path):
    corpus = sc.generate_corpus(sc.CorpusDefinition(), 40, RngStream(3))
    ckpt = tr.train(corpus, tr.TrainConfig(m=8, k=6, epochs=2, batch_size=8))
    sc.save_corpus(corpus, tmp_path / "c.h2rc")
    tr.save_checkpoint(ckpt, tmp_path / "m.h2rw")
    corpus_back = sc.load_corpus(tmp_path / "c.h2rc")
    ckpt_back = tr.load_checkpoint(tmp_path / "m.h2rw")
    corpus_ok = corpus_back == corpus and sc.encode_corpus(corpus_back) == (tmp_path / "c.h2rc").read_bytes()
    ckpt_ok = ckpt_back == ckpt and tr.encode_checkpoint(ckpt_back) == (tmp_path / "m.h2rw").read_bytes()
    a, b = ckpt.model(), ckpt_back.model()
    forward_ok = True
    for s in corpus.test:
        tokens = tokenize(s.reminder_text, corpus.vocab).tokens
        oa, ob = a.predict(tokens, s.grid.features), b.predict(tokens, s.grid.features)
        forward_ok &= np.array_equal(oa.p_ans.data, ob.p_ans.data) and np.array_equal(oa.p_2.data, ob.p_2.data)

    def raises(fn, buf, cls):
        try:
            fn(buf)
        except cls:
            return True
        except Exception:  # noqa: BLE001
            return False
        return False

    cbuf = sc.encode_corpus(corpus)
    wbuf = tr.encode_checkpoint(ckpt)
    flipped_c, flipped_w = bytearray(cbuf), bytearray(wbuf)
    flipped_c[-30] ^= 1
    flipped_w[-30] ^= 1
    bad_shape = replace(ckpt, params={**ckpt.params, "proj.b": np.zeros((9, 1))})
    errors = {
        "corpus truncated": raises(sc.decode_corpus, cbuf[: len(cbuf) // 3], TruncatedError),
        "corpus empty": raises(sc.decode_corpus, b"", TruncatedError),
        "corpus magic": raises(sc.decode_corpus, b"XXXX" + cbuf[4:], FormatError),
        "corpus version": raises(sc.decode_corpus, cbuf[:4] + struct.pack("<I", 99) + cbuf[8:], VersionError),
        "corpus crc": raises(sc.decode_corpus, bytes(flipped_c), ChecksumError),
        "ckpt truncated": raises(tr.decode_checkpoint, wbuf[:-5], TruncatedError),
        "ckpt version": raises(tr.decode_checkpoint, wbuf[:4] + struct.pack("<I", 99) + wbuf[8:], VersionError),
        "ckpt crc": raises(tr.decode_checkpoint, bytes(flipped_w), ChecksumError),
        "ckpt shape": raises(tr.decode_checkpoint, tr.encode_checkpoint(bad_shape), ShapeMismatchError),
    }
    ok = corpus_ok and ckpt_ok and forward_ok and all(errors.values())
    failed = [k for k, v in errors.items() if not v]
    assert verdict(
        8, ok,
        f"corpus round trip {corpus_ok}, checkpoint round trip {ckpt_ok}, forward identical {forward_ok}, "
        f"error classes {len(errors) - len(failed)}/{len(errors)}" + (f" (failed: {failed})" if failed else ""),
    )


def test_edge_filter_fuzz():
    rng = np.random.default_rng(99)
    geometries = [(4, 4, 1), (3, 3, 1), (5, 7, 1), (14, 14, 1), (7, 7, 2), (6, 9, 2)]
    worst_sum, rim_mass, rim_argmax = 0.0, 0.0, 0
    for i in range(10_000):
        rows, cols, bw = geometries[i % len(geometries)]
        d = rows * cols
        kind = i % 5
        if kind == 0:
            p = rng.dirichlet(np.full(d, 0.3))
        elif kind == 1:
            p = np.zeros(d)
            p[rng.integers(d)] = 1.0
        elif kind == 2:
            p = np.where(rim_mask(rows, cols, bw), rng.random(d), 0.0)
            p /= p.sum()
        elif kind == 3:
            logits = 30 * rng.standard_normal(d)
            p = np.exp(logits - logits.max())
            p /= p.sum()
        else:
            p = np.full(d, 1.0 / d)
        out = apply_edge_filter(p, rows, cols, EdgeFilterSpec(bw)).data[:, 0]
        rim = rim_mask(rows, cols, bw)
        worst_sum = max(worst_sum, abs(out.sum() - 1.0))
        rim_mass = max(rim_mass, float(out[rim].sum()))
        rim_argmax += int(rim[int(np.argmax(out))])
    ok = worst_sum <= 1e-9 and rim_mass == 0.0 and rim_argmax == 0
    assert verdict(
        9, ok,
        f"10000 vectors, max |sum-1| {worst_sum:.1e}, max rim mass {rim_mass}, rim argmax count {rim_argmax}",
    )


def test_ablation_runs():
    corpus = sc.generate_corpus(sc.CorpusDefinition(), 240, RngStream(5))
    cfg = tr.TrainConfig(m=16, k=12, epochs=6)
    first = ev.ablate_layers(corpus, cfg)
    second = ev.ablate_layers(corpus, cfg)
    both = {"layers=1", "layers=2"} <= set(first)
    deterministic = first == second
    h1, h2 = first["layers=1"]["attention_argmax_hit"], first["layers=2"]["attention_argmax_hit"]
    direction = "holds" if h2 >= h1 else "does not hold"
    assert verdict(
        10, both and deterministic,
        f"both variants reported {both}, deterministic {deterministic}; "
        f"attention hit 1-layer {h1:.4f} vs 2-layer {h2:.4f} (direction {direction}, reported only)",
    )
