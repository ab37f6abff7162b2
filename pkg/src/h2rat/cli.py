"""Command line entry point: gen | train | eval | infer | viz | ablate.

Settings come from an INI-style config file (one ``[section]`` per
subcommand, ``key = value`` lines) and are overridden by flags. Exit codes:
0 ok, 2 usage, 3 format/shape, 4 numeric failure, 5 I/O.
"""

import argparse
import configparser
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from h2rat import evaluation, scenarios, training, vision
from h2rat.attention import ABNORMALITIES
from h2rat.errors import DimensionError, FormatError, NoCorrectionError, NumericError, TemplateError
from h2rat.textenc import UNK, tokenize

log = logging.getLogger("h2rat")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _field_types(cls, skip=()):
    return {f.name: f.type for f in fields(cls) if f.name not in skip}


GEN_KEYS = {
    "n": int,
    **{
        k: t
        for k, t in _field_types(scenarios.CorpusDefinition).items()
        if k in ("rows", "cols", "f", "sigma", "definition_seed", "split_ratio", "location_ambiguous_rate",
                 "vague_rate", "distractor_rate", "second_culprit_rate")
    },
}
TRAIN_KEYS = _field_types(training.TrainConfig)
EVAL_KEYS = {"threshold": float, "edge_filter": str, "border_width": int, "heatmaps": int}
INFER_KEYS = {"edge_filter": str, "border_width": int}
VIZ_KEYS = {"block": int, "limit": int}

SECTIONS = {"gen": GEN_KEYS, "train": TRAIN_KEYS, "eval": EVAL_KEYS, "infer": INFER_KEYS, "viz": VIZ_KEYS,
            "ablate": TRAIN_KEYS}


def _convert(key, raw, typ):
    typ = {"int": int, "float": float, "str": str}.get(typ, typ) if isinstance(typ, str) else typ
    try:
        return typ(raw)
    except ValueError:
        raise UsageError(f"setting {key}: cannot parse {raw!r} as {typ.__name__}") from None


def load_config(path, section):
    """Settings of ``section`` from a config file; unknown sections or keys are rejected."""
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise UsageError(f"config {path}: {exc}") from None
    for name in parser.sections():
        if name not in SECTIONS:
            raise UsageError(f"config {path}: unknown section [{name}]")
        for key in parser[name]:
            if key not in SECTIONS[name]:
                raise UsageError(f"config {path}: unknown key {key!r} in [{name}]")
    if not parser.has_section(section):
        return {}
    allowed = SECTIONS[section]
    return {k: _convert(k, v, allowed[k]) for k, v in parser[section].items()}


def effective(section, file_settings, overrides):
    settings = dict(file_settings)
    for k, v in overrides.items():
        if v is not None:
            settings[k] = v
    for k in sorted(settings):
        log.info("setting [%s] %s = %s", section, k, settings[k])
    return settings


def _on_off(value, flag="--edge-filter"):
    if value not in ("on", "off"):
        raise UsageError(f"{flag} must be 'on' or 'off', got {value!r}")
    return value == "on"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args):
    s = effective("gen", load_config(args.config, "gen"), {"n": args.n, "sigma": args.sigma})
    seed = 0 if args.seed is None else args.seed
    log.info("setting [gen] seed = %s", seed)
    n = int(s.pop("n", 2000))
    if n < 2:
        raise UsageError(f"--n must be at least 2, got {n}")
    defn = scenarios.CorpusDefinition(**s)
    corpus = scenarios.generate_corpus(defn, n, seed)
    scenarios.save_corpus(corpus, args.out)
    for name, split in (("train", corpus.train), ("test", corpus.test)):
        counts = [sum(x.spec.label == c for x in split) for c in range(len(ABNORMALITIES))]
        print(f"{name}: {len(split)} samples, per class {counts}")
    print(f"sigma={defn.sigma} seed={seed} vocabulary={len(corpus.vocab)} -> {args.out}")
    return EXIT_OK


def _train_config(args, section):
    s = effective(section, load_config(args.config, section), {"seed": args.seed, "epochs": args.epochs})
    try:
        return training.TrainConfig.from_dict(s)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args):
    config = _train_config(args, "train")
    corpus = scenarios.load_corpus(args.corpus)

    def report(row):
        val = "-" if row["val_acc"] is None else f"{row['val_acc']:.4f}"
        print(f"epoch {row['epoch']}, train_loss {row['train_loss']:.6f}, val_acc {val}", flush=True)

    ckpt = training.train(corpus, config, on_epoch=report)
    training.save_checkpoint(ckpt, args.out)
    print(f"selected epoch {ckpt.metadata['selected_epoch']} -> {args.out}")
    return EXIT_OK


def _check_geometry(ckpt, rows, cols, f, what):
    d = ckpt.dims
    if (d.rows, d.cols, d.f) != (rows, cols, f):
        raise DimensionError(
            f"{what} geometry {rows}x{cols}x{f} does not match checkpoint {d.rows}x{d.cols}x{d.f}"
        )


def cmd_eval(args):
    s = effective(
        "eval",
        load_config(args.config, "eval"),
        {"threshold": args.threshold, "edge_filter": args.edge_filter, "heatmaps": args.heatmaps},
    )
    threshold = float(s.get("threshold", 0.5))
    if not 0.0 <= threshold <= 1.0:
        raise UsageError("--threshold must lie in [0, 1]")
    use_filter = _on_off(s.get("edge_filter", "on"))
    spec = vision.EdgeFilterSpec(int(s.get("border_width", 1))) if use_filter else None
    ckpt = training.load_checkpoint(args.checkpoint)
    corpus = scenarios.load_corpus(args.corpus)
    defn = corpus.definition
    _check_geometry(ckpt, defn.rows, defn.cols, defn.f, "corpus")
    test = corpus.test or corpus.train
    result = evaluation.evaluate(ckpt, test, report_threshold=threshold, edge_filter=spec)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluation.format_report(result)
    (out / "report.txt").write_text(report, encoding="utf-8")
    (out / "metrics.txt").write_text(evaluation.format_metrics(result.summary), encoding="utf-8")
    (out / "pr.csv").write_text(evaluation.format_pr_rows(result.points), encoding="utf-8")
    evaluation.dump_records(result.records, defn.rows, defn.cols, out / "outcomes.jsonl", use_filter)
    n_maps = int(s.get("heatmaps", 0))
    if n_maps:
        hm = out / "heatmaps"
        hm.mkdir(exist_ok=True)
        for rec in result.records[:n_maps]:
            evaluation.render_heatmap(rec.attention, defn.rows, defn.cols, hm / f"{rec.index:05d}_model.pgm")
            evaluation.render_heatmap(rec.baseline, defn.rows, defn.cols, hm / f"{rec.index:05d}_baseline.pgm")
    sys.stdout.write(report)
    return EXIT_OK


def cmd_infer(args):
    s = effective("infer", load_config(args.config, "infer"), {"edge_filter": args.edge_filter})
    use_filter = _on_off(s.get("edge_filter", "on"))
    ckpt = training.load_checkpoint(args.checkpoint)
    grid = vision.load_features(args.features)
    _check_geometry(ckpt, grid.rows, grid.cols, grid.f, "feature file")
    reminder = tokenize(args.reminder, ckpt.vocab)
    if all(t == UNK for t in reminder.tokens):
        print("warning: no reminder word is in the vocabulary; running on unknown tokens", file=sys.stderr)
    out = ckpt.model().predict(reminder.tokens, grid.features)
    attn = out.p_2
    if use_filter:
        attn = vision.apply_edge_filter(attn, grid.rows, grid.cols, vision.EdgeFilterSpec(int(s.get("border_width", 1))))
    p = attn.data[:, 0]
    top = sorted(range(p.size), key=lambda i: (-p[i], i))[:3]
    cls = out.predicted_class
    print(f"predicted_class: {ABNORMALITIES[cls]} ({cls})")
    print(f"confidence: {out.confidence:.6f}")
    for rank, region in enumerate(top, 1):
        r, c = divmod(region, grid.cols)
        print(f"attention_{rank}: row={r} col={c} mass={p[region]:.6f}")
    zone = vision.zone_of(top[0], grid.rows, grid.cols)
    try:
        action = ckpt.table.best(cls, zone)
        print(f"correction: {ckpt.actions[action]} ({action})")
    except NoCorrectionError as exc:
        print(f"correction: {exc}")
    return EXIT_OK


def cmd_viz(args):
    s = effective("viz", load_config(args.config, "viz"), {"limit": args.limit})
    block = int(s.get("block", evaluation.BLOCK))
    limit = s.get("limit")
    try:
        records = evaluation.load_records(args.outcomes)
    except ValueError as exc:
        raise FormatError(f"outcome dump {args.outcomes}: {exc}") from exc
    if limit is not None:
        records = records[: int(limit)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        rows, cols = rec["rows"], rec["cols"]
        evaluation.render_heatmap(np.array(rec["attention"]), rows, cols, out / f"{rec['index']:05d}_model.pgm", block)
        evaluation.render_heatmap(np.array(rec["baseline"]), rows, cols, out / f"{rec['index']:05d}_baseline.pgm", block)
    print(f"rendered {2 * len(records)} heatmaps -> {out}")
    return EXIT_OK


def cmd_ablate(args):
    config = _train_config(args, "ablate")
    corpus = scenarios.load_corpus(args.corpus)
    report = evaluation.ablate_layers(corpus, config)
    text = evaluation.format_ablation(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true", help="echo effective settings and progress")

    p = argparse.ArgumentParser(prog="h2rat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic corpus")
    g.add_argument("--n", type=int)
    g.add_argument("--sigma", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train a model on a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="precision/recall and attention evaluation")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--threshold", type=float)
    e.add_argument("--edge-filter", dest="edge_filter", choices=("on", "off"))
    e.add_argument("--heatmaps", type=int, help="render model/baseline heatmap pairs for the first N samples")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", parents=[common], help="classify one reminder + feature file")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--reminder", required=True)
    i.add_argument("--features", required=True)
    i.add_argument("--edge-filter", dest="edge_filter", choices=("on", "off"))
    i.set_defaults(func=cmd_infer)

    v = sub.add_parser("viz", parents=[common], help="render heatmaps from an eval outcome dump")
    v.add_argument("--outcomes", required=True)
    v.add_argument("--limit", type=int)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_viz)

    a = sub.add_parser("ablate", parents=[common], help="compare one- and two-layer attention")
    a.add_argument("--corpus", required=True)
    a.add_argument("--epochs", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DimensionError, TemplateError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
