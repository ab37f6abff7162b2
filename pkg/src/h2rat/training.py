"""Cross-entropy training with Adam, model selection and checkpoint files."""

import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from h2rat import binio
from h2rat import numerics as nx
from h2rat.attention import ABNORMALITIES, CorrectionTable
from h2rat.errors import (
    ChecksumError,
    DivergenceError,
    FormatError,
    NumericError,
    ShapeMismatchError,
    TruncatedError,
)
from h2rat.model import Model, ModelDims, init_params, param_shapes, run
from h2rat.rng import RngStream
from h2rat.textenc import Vocabulary, tokenize

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"H2RW"
CHECKPOINT_VERSION = 1
PROB_FLOOR = 1e-12


def loss_cross_entropy(p_ans, label):
    """-log p_ans[label], with the probability floored at 1e-12."""
    if not 0 <= label < p_ans.rows:
        raise ValueError(f"label {label} outside [0, {p_ans.rows})")
    return nx.scale(nx.log_elem(nx.element(p_ans, label), floor=PROB_FLOOR), -1.0)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    eval_every: int = 1
    patience: int = 10
    m: int = 32
    k: int = 24
    layers: int = 2
    stop_loss: float = 0.0  # stop once the epoch's mean train loss drops below this; 0 disables
    select: str = "best_val"  # or "last"

    def __post_init__(self):
        for name in ("epochs", "batch_size", "eval_every", "patience", "m", "k", "layers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0 or self.eps <= 0 or self.stop_loss < 0:
            raise ValueError("learning_rate, eps and stop_loss must be non-negative (eps positive)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.select not in ("best_val", "last"):
            raise ValueError(f"unknown selection rule {self.select!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Checkpoint:
    dims: ModelDims
    params: dict
    vocab: Vocabulary
    table: CorrectionTable
    actions: tuple
    metadata: dict
    version: int = CHECKPOINT_VERSION

    def model(self):
        return Model(self.dims, self.params)

    def __eq__(self, other):
        return (
            isinstance(other, Checkpoint)
            and self.dims == other.dims
            and self.params.keys() == other.params.keys()
            and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
            and self.vocab == other.vocab
            and self.table == other.table
            and tuple(self.actions) == tuple(other.actions)
            and self.metadata == other.metadata
            and self.version == other.version
        )


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        """Update ``params`` in place (fixed name order)."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in params:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            if self.lr == 0:
                continue
            mhat = self.m[name] / c1
            vhat = self.v[name] / c2
            params[name] = params[name] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class Example:
    tokens: tuple
    features: np.ndarray
    label: int


def prepare(samples, vocab):
    return [Example(tokenize(s.reminder_text, vocab).tokens, s.grid.features, s.spec.label) for s in samples]


def batch_loss_and_grads(params, dims, batch):
    """Mean cross-entropy over ``batch`` and its gradient for every parameter.

    Returns (mean_loss, grads, number_correct).
    """
    tape = nx.GradientTape()
    taped = {name: tape.watch(name, value) for name, value in params.items()}
    total = None
    correct = 0
    for ex in batch:
        out = run(taped, dims, ex.tokens, ex.features)
        correct += int(out.predicted_class == ex.label)
        loss = loss_cross_entropy(out.p_ans, ex.label)
        total = loss if total is None else nx.add(total, loss)
    mean = nx.scale(total, 1.0 / len(batch))
    grads = nx.backward(tape, mean)
    return float(mean.data[0, 0]), grads, correct


def accuracy(model, examples):
    if not examples:
        return 0.0
    hits = sum(model.predict(ex.tokens, ex.features).predicted_class == ex.label for ex in examples)
    return hits / len(examples)


def mean_loss(model, examples):
    total = 0.0
    for ex in examples:
        total += float(loss_cross_entropy(model.predict(ex.tokens, ex.features).p_ans, ex.label).data[0, 0])
    return total / len(examples)


def _snapshot(params):
    return {k: binio.to_f32(v) for k, v in params.items()}


def dims_for(corpus, config):
    d = corpus.definition
    return ModelDims(
        vocab=len(corpus.vocab),
        m=config.m,
        k=config.k,
        f=d.f,
        rows=d.rows,
        cols=d.cols,
        classes=len(ABNORMALITIES),
        layers=config.layers,
    )


def train(corpus, config, on_epoch=None):
    """Mini-batch Adam on the train split; returns the selected checkpoint.

    Held-out accuracy is measured on the corpus test split (or on the train
    split when the corpus has none). ``on_epoch`` receives each history row.
    """
    if not corpus.train:
        raise ValueError("corpus has an empty train split")
    dims = dims_for(corpus, config)
    rng = RngStream(config.seed)
    params = init_params(dims, rng.spawn(1))
    shuffler = rng.spawn(2)
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)

    train_ex = prepare(corpus.train, corpus.vocab)
    val_ex = prepare(corpus.test, corpus.vocab) if corpus.test else train_ex

    history = []
    best = None  # (val_acc, epoch, snapshot)
    since_best = 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffler.permutation(len(train_ex))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_ex[i] for i in order[start : start + config.batch_size]]
            step += 1
            try:
                loss, grads, hits = batch_loss_and_grads(params, dims, batch)
                opt.step(params, grads)
                for name, value in params.items():
                    if not np.isfinite(value).all():
                        raise NumericError(f"parameter {name} became non-finite")
            except NumericError as exc:
                raise DivergenceError(f"training diverged at epoch {epoch}, step {step}: {exc}") from exc
            loss_sum += loss * len(batch)
            correct += hits
        train_loss = loss_sum / len(train_ex)
        train_acc = correct / len(train_ex)

        val_acc = None
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            snap = _snapshot(params)
            val_acc = accuracy(Model(dims, snap), val_ex)
            if best is None or val_acc > best[0]:
                best = (val_acc, epoch, snap)
                since_best = 0
            else:
                since_best += 1
        row = {"epoch": epoch, "train_loss": train_loss, "train_acc": train_acc, "val_acc": val_acc}
        history.append(row)
        log.debug("epoch %d, train_loss %.6f, val_acc %s", epoch, train_loss, "-" if val_acc is None else f"{val_acc:.4f}")
        if on_epoch is not None:
            on_epoch(row)
        if config.stop_loss > 0 and train_loss < config.stop_loss:
            break
        if since_best >= config.patience:
            break

    last = _snapshot(params)
    if config.select == "last" or best is None:
        chosen, chosen_epoch = last, history[-1]["epoch"]
    else:
        chosen, chosen_epoch = best[2], best[1]
    metadata = {
        "config": config.to_dict(),
        "corpus_seed": corpus.seed,
        "final_train_loss": history[-1]["train_loss"],
        "selected_epoch": chosen_epoch,
        "best_val_acc": None if best is None else best[0],
        "epochs_run": len(history),
        "history": history,
    }
    return Checkpoint(dims, chosen, corpus.vocab, corpus.definition.table, tuple(corpus.definition.actions), metadata)


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------


def encode_checkpoint(ckpt):
    names = list(param_shapes(ckpt.dims))
    manifest = {
        "dims": ckpt.dims.to_dict(),
        "tensors": [[n, list(ckpt.params[n].shape)] for n in names],
        "vocab": ckpt.vocab.to_list(),
        "table": ckpt.table.to_list(),
        "actions": list(ckpt.actions),
        "metadata": ckpt.metadata,
    }
    w = binio.Writer()
    w.raw(CHECKPOINT_MAGIC)
    w.u32(ckpt.version)
    w.text(binio.dump_manifest(manifest))
    for n in names:
        w.f32(ckpt.params[n].reshape(-1))
    return binio.seal(w.getvalue())


def decode_checkpoint(buf):
    r = binio.open_header(buf, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")
    try:
        man = binio.read_manifest(r)
        dims = ModelDims(**man["dims"])
        tensors = man["tensors"]
        vocab = Vocabulary.from_list(man["vocab"])
        table = CorrectionTable.from_list(man["table"])
        actions = tuple(man["actions"])
        metadata = man["metadata"]
    except TruncatedError:
        raise
    except (FormatError, KeyError, TypeError, ValueError) as exc:
        if not binio.crc_ok(buf):
            raise ChecksumError(f"checkpoint: CRC32 mismatch ({exc})") from exc
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"checkpoint: malformed manifest: {exc}") from exc

    expected = param_shapes(dims)
    declared = [(n, tuple(s)) for n, s in tensors]
    if [n for n, _ in declared] != list(expected):
        raise ShapeMismatchError(f"checkpoint: tensor names {[n for n, _ in declared]} do not match the model layout")
    for n, shape in declared:
        if shape != expected[n]:
            raise ShapeMismatchError(f"checkpoint: tensor {n} has shape {shape}, dims imply {expected[n]}")
    if len(vocab) != dims.vocab:
        raise ShapeMismatchError(f"checkpoint: vocabulary of {len(vocab)} words, dims say {dims.vocab}")
    params = {}
    for n, shape in declared:
        params[n] = r.f32(shape[0] * shape[1]).reshape(shape)
    binio.check_seal(r)
    return Checkpoint(dims, params, vocab, table, actions, metadata)


def save_checkpoint(ckpt, path):
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
