"""Parameter layout, initialisation and the end-to-end forward pass."""

from dataclasses import asdict, dataclass

import numpy as np

from h2rat import attention, textenc, vision
from h2rat import numerics as nx
from h2rat.binio import to_f32


@dataclass(frozen=True)
class ModelDims:
    vocab: int
    m: int = 32
    k: int = 24
    f: int = 16
    rows: int = 4
    cols: int = 4
    classes: int = 4
    layers: int = 2

    @property
    def d(self):
        return self.rows * self.cols

    def to_dict(self):
        return asdict(self)


def param_shapes(dims):
    """Ordered ``name -> shape`` for every trainable tensor."""
    m, k = dims.m, dims.k
    shapes = {
        "embedding": (m, dims.vocab),
        "lstm.w_x": (4 * m, m),
        "lstm.w_h": (4 * m, m),
        "lstm.b": (4 * m, 1),
        "proj.w": (m, dims.f),
        "proj.b": (m, 1),
    }
    for i in range(1, dims.layers + 1):
        shapes[f"att{i}.w_v"] = (k, m)
        shapes[f"att{i}.w_r"] = (k, m)
        shapes[f"att{i}.b_r"] = (k, 1)
        shapes[f"att{i}.w_p"] = (1, k)
        shapes[f"att{i}.b_p"] = (1, 1)
    shapes["head.w_u"] = (dims.classes, m)
    shapes["head.b_u"] = (dims.classes, 1)
    return shapes


def _is_bias(name):
    return name.rsplit(".", 1)[-1].startswith("b")


def init_params(dims, rng):
    """Glorot-uniform matrices, zero biases, forget-gate bias +1.

    Values are rounded to float32 so that a checkpoint of an untrained model
    round-trips exactly.
    """
    params = {}
    for name, (rows, cols) in param_shapes(dims).items():
        if _is_bias(name):
            w = np.zeros((rows, cols))
        else:
            s = np.sqrt(6.0 / (rows + cols))
            w = rng.uniform(rows * cols, -s, s).reshape(rows, cols)
        params[name] = to_f32(w)
    params["lstm.b"][dims.m : 2 * dims.m] = 1.0
    return params


def bind(tensors, dims):
    """Group a flat ``name -> Tensor`` mapping into the per-module parameter objects."""
    lstm = textenc.LstmCellParams(tensors["lstm.w_x"], tensors["lstm.w_h"], tensors["lstm.b"])
    proj = vision.ProjectionParams(tensors["proj.w"], tensors["proj.b"])
    layers = [
        attention.AttentionLayerParams(
            tensors[f"att{i}.w_v"],
            tensors[f"att{i}.w_r"],
            tensors[f"att{i}.b_r"],
            tensors[f"att{i}.w_p"],
            tensors[f"att{i}.b_p"],
        )
        for i in range(1, dims.layers + 1)
    ]
    head = attention.H2ratParams(layers, tensors["head.w_u"], tensors["head.b_u"])
    return tensors["embedding"], lstm, proj, head


def run(tensors, dims, tokens, features):
    """Reminder tokens + raw region features (f x d) -> AttentionOutcome."""
    emb, lstm, proj, head = bind(tensors, dims)
    R = textenc.encode_reminder(textenc.embed(tokens, emb), lstm)
    V = vision.project_regions(features, proj)
    return attention.forward(V, R, head)


class Model:
    """Frozen parameters plus dims; inference only (no tape)."""

    def __init__(self, dims, params):
        self.dims = dims
        self.params = params
        self._tensors = {k: nx.Tensor(v) for k, v in params.items()}

    def predict(self, tokens, features):
        if isinstance(features, vision.RegionGrid):
            features = features.features
        return run(self._tensors, self.dims, tokens, features)
