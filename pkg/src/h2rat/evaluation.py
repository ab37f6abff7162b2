"""Precision/recall sweeps, attention agreement, heatmaps and the layer ablation.

A prediction is *accepted* at threshold t when its confidence (max class
probability) is >= t. Per class c, precision = TP / accepted-predicted-c and
recall = TP / all-labelled-c. Ratios with a zero denominator are reported
as 0 and flagged.
"""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from h2rat.attention import ABNORMALITIES
from h2rat.errors import EmptyInputError
from h2rat.textenc import tokenize
from h2rat.vision import EdgeFilterSpec, apply_edge_filter, zone_of

BLOCK = 32


def default_thresholds():
    return [round(0.05 * i, 2) for i in range(21)]


@dataclass
class PrPoint:
    threshold: float
    precision: tuple
    recall: tuple
    macro_precision: float
    macro_recall: float
    accepted: int
    undefined: tuple = ()  # ("precision"|"recall", class) pairs that hit a zero denominator


@dataclass
class AttentionAgreement:
    argmax_hit: float
    culprit_mass: float
    tv_distance: float


@dataclass
class SampleRecord:
    index: int
    label: int
    predicted: int
    confidence: float
    attention: np.ndarray  # p_2, edge-filtered when the filter is on
    baseline: np.ndarray
    culprits: tuple
    correction: object  # action id, or None when the table has no entry
    expected_correction: int


@dataclass
class EvalResult:
    points: list
    agreement: AttentionAgreement
    summary: dict
    records: list = field(default_factory=list, repr=False)


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def pr_points(labels, predicted, confidence, thresholds, n_classes):
    labels = np.asarray(labels)
    predicted = np.asarray(predicted)
    confidence = np.asarray(confidence, dtype=np.float64)
    if labels.size == 0:
        raise EmptyInputError("no predictions to score")
    points = []
    for t in thresholds:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"threshold {t} outside [0, 1]")
        accepted = confidence >= t
        precision, recall, undefined = [], [], []
        for c in range(n_classes):
            tp = int(np.sum(accepted & (predicted == c) & (labels == c)))
            p, p_undef = _ratio(tp, int(np.sum(accepted & (predicted == c))))
            r, r_undef = _ratio(tp, int(np.sum(labels == c)))
            precision.append(p)
            recall.append(r)
            if p_undef:
                undefined.append(("precision", c))
            if r_undef:
                undefined.append(("recall", c))
        points.append(
            PrPoint(
                float(t),
                tuple(precision),
                tuple(recall),
                float(np.mean(precision)),
                float(np.mean(recall)),
                int(accepted.sum()),
                tuple(undefined),
            )
        )
    return points


def attention_agreement(attentions, baselines, culprit_sets):
    hits, mass, tv = [], [], []
    for p, b, culprits in zip(attentions, baselines, culprit_sets):
        p = np.asarray(p).reshape(-1)
        b = np.asarray(b).reshape(-1)
        hits.append(float(int(np.argmax(p)) in culprits))
        mass.append(float(p[list(culprits)].sum()))
        tv.append(0.5 * float(np.abs(p - b).sum()))
    if not hits:
        raise EmptyInputError("no attention maps to score")
    return AttentionAgreement(float(np.mean(hits)), float(np.mean(mass)), float(np.mean(tv)))


def evaluate(ckpt, test, thresholds=None, edge_filter=EdgeFilterSpec(), report_threshold=0.5):
    if not test:
        raise EmptyInputError("evaluation needs a non-empty test set")
    thresholds = default_thresholds() if thresholds is None else list(thresholds)
    if report_threshold not in thresholds:
        thresholds = sorted(set(thresholds) | {report_threshold})
    model = ckpt.model()
    rows, cols = ckpt.dims.rows, ckpt.dims.cols
    records = []
    for i, s in enumerate(test):
        out = model.predict(tokenize(s.reminder_text, ckpt.vocab).tokens, s.grid.features)
        attn = out.p_2 if edge_filter is None else apply_edge_filter(out.p_2, rows, cols, edge_filter)
        region = int(np.argmax(attn.data[:, 0]))
        try:
            action = ckpt.table.best(out.predicted_class, zone_of(region, rows, cols))
        except KeyError:
            action = None
        records.append(
            SampleRecord(
                i,
                s.spec.label,
                out.predicted_class,
                out.confidence,
                attn.data[:, 0].copy(),
                s.baseline_attention[:, 0].copy(),
                s.spec.culprit_regions,
                action,
                s.spec.correction_action,
            )
        )
    labels = [r.label for r in records]
    preds = [r.predicted for r in records]
    conf = [r.confidence for r in records]
    points = pr_points(labels, preds, conf, thresholds, ckpt.dims.classes)
    agreement = attention_agreement(
        [r.attention for r in records], [r.baseline for r in records], [r.culprits for r in records]
    )
    at = next(p for p in points if p.threshold == report_threshold)
    summary = {
        "n": len(records),
        "threshold": report_threshold,
        "edge_filter": edge_filter is not None,
        "macro_precision": at.macro_precision,
        "macro_recall": at.macro_recall,
        # the "(precision + recall) / 2" accuracy, kept next to plain accuracy
        "pr_mean_accuracy": 0.5 * (at.macro_precision + at.macro_recall),
        "classification_accuracy": float(np.mean(np.array(labels) == np.array(preds))),
        "attention_argmax_hit": agreement.argmax_hit,
        "attention_culprit_mass": agreement.culprit_mass,
        "attention_tv_distance": agreement.tv_distance,
        "correction_match": float(np.mean([r.correction == r.expected_correction for r in records])),
        "undefined_ratios": len(at.undefined),
    }
    return EvalResult(points, agreement, summary, records)


# ---------------------------------------------------------------------------
# text outputs
# ---------------------------------------------------------------------------


def format_report(result, class_names=ABNORMALITIES):
    s = result.summary
    lines = [
        f"threshold: {s['threshold']}  edge_filter: {'on' if s['edge_filter'] else 'off'}  samples: {s['n']}",
        "",
        f"{'class':<24}{'precision':>10}{'recall':>10}",
    ]
    at = next(p for p in result.points if p.threshold == s["threshold"])
    for c, name in enumerate(class_names):
        flag = "*" if any(cls == c for _, cls in at.undefined) else ""
        lines.append(f"{name:<24}{at.precision[c]:>10.4f}{at.recall[c]:>10.4f}{flag}")
    lines.append(f"{'macro':<24}{at.macro_precision:>10.4f}{at.macro_recall:>10.4f}")
    lines += [
        "",
        f"pr-mean accuracy ((P+R)/2): {s['pr_mean_accuracy']:.4f}",
        f"classification accuracy:    {s['classification_accuracy']:.4f}",
        f"attention argmax hit:       {s['attention_argmax_hit']:.4f}",
        f"attention culprit mass:     {s['attention_culprit_mass']:.4f}",
        f"attention TV distance:      {s['attention_tv_distance']:.4f}",
        f"correction match:           {s['correction_match']:.4f}",
    ]
    if at.undefined:
        lines.append("* zero denominator, reported as 0")
    return "\n".join(lines) + "\n"


def format_metrics(summary):
    return "".join(f"{k}={v}\n" for k, v in summary.items())


def format_pr_rows(points, class_names=ABNORMALITIES):
    out = ["threshold,class,precision,recall"]
    for p in points:
        for c, name in enumerate(class_names):
            out.append(f"{p.threshold},{name},{p.precision[c]!r},{p.recall[c]!r}")
        out.append(f"{p.threshold},macro,{p.macro_precision!r},{p.macro_recall!r}")
    return "\n".join(out) + "\n"


def dump_records(records, rows, cols, path, edge_filter):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            doc = {
                "index": r.index,
                "rows": rows,
                "cols": cols,
                "label": r.label,
                "predicted": r.predicted,
                "confidence": r.confidence,
                "edge_filter": edge_filter,
                "attention": r.attention.tolist(),
                "baseline": r.baseline.tolist(),
            }
            fh.write(json.dumps(doc) + "\n")


def load_records(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# heatmaps
# ---------------------------------------------------------------------------


def heatmap_bytes(attn, rows, cols, block=BLOCK):
    """Binary PGM (P5): one block x block cell per region, value attn/max * 255."""
    p = np.asarray(attn.data if hasattr(attn, "data") else attn, dtype=np.float64).reshape(-1)
    if p.size != rows * cols:
        raise ValueError(f"attention of length {p.size} does not match a {rows}x{cols} grid")
    if not np.isfinite(p).all() or (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError("heatmap input is not a probability vector")
    levels = np.rint(p / p.max() * 255.0).astype(np.uint8).reshape(rows, cols)
    img = np.kron(levels, np.ones((block, block), dtype=np.uint8))
    header = f"P5\n{cols * block} {rows * block}\n255\n".encode("ascii")
    return header + img.tobytes()


def render_heatmap(attn, rows, cols, path, block=BLOCK):
    data = heatmap_bytes(attn, rows, cols, block)
    Path(path).write_bytes(data)
    return Path(path)


def read_pgm(path):
    """Minimal P5 reader (used by tests and the viz round trip)."""
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------


def ablate_layers(corpus, config, layer_counts=(1, 2), edge_filter=EdgeFilterSpec()):
    """Train one model per layer count under the same seed/config and compare."""
    from h2rat.training import train

    report = {}
    for n in layer_counts:
        ckpt = train(corpus, replace(config, layers=n))
        res = evaluate(ckpt, corpus.test or corpus.train, edge_filter=edge_filter)
        report[f"layers={n}"] = {
            "classification_accuracy": res.summary["classification_accuracy"],
            "pr_mean_accuracy": res.summary["pr_mean_accuracy"],
            "attention_argmax_hit": res.summary["attention_argmax_hit"],
            "attention_culprit_mass": res.summary["attention_culprit_mass"],
            "selected_epoch": ckpt.metadata["selected_epoch"],
        }
    return report


def format_ablation(report):
    keys = ["classification_accuracy", "pr_mean_accuracy", "attention_argmax_hit", "attention_culprit_mass"]
    lines = [f"{'variant':<12}" + "".join(f"{k:>26}" for k in keys)]
    for name, row in report.items():
        lines.append(f"{name:<12}" + "".join(f"{row[k]:>26.4f}" for k in keys))
    if "layers=1" in report and "layers=2" in report:
        a1 = report["layers=1"]["attention_argmax_hit"]
        a2 = report["layers=2"]["attention_argmax_hit"]
        verdict = "holds" if a2 >= a1 else "does not hold"
        lines.append(f"two-layer attention hit >= one-layer: {verdict} ({a2:.4f} vs {a1:.4f})")
    return "\n".join(lines) + "\n"
