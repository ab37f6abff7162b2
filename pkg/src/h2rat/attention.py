"""Stacked attention over regions, the abnormality classifier and correction lookup."""

from dataclasses import dataclass, field

import numpy as np

from h2rat import numerics as nx
from h2rat.errors import DimensionError, NoCorrectionError
from h2rat.vision import EdgeFilterSpec, apply_edge_filter, zone_of

ABNORMALITIES = ("wrong_action", "wrong_pose", "wrong_region", "wrong_spatial_relation")


@dataclass
class AttentionLayerParams:
    w_v: nx.Tensor  # k x m
    w_r: nx.Tensor  # k x m
    b_r: nx.Tensor  # k x 1
    w_p: nx.Tensor  # 1 x k, shared by every region column
    b_p: nx.Tensor  # 1 x 1


@dataclass
class H2ratParams:
    layers: list
    w_u: nx.Tensor  # C x m
    b_u: nx.Tensor  # C x 1

    @property
    def n_classes(self):
        return self.w_u.rows


@dataclass
class AttentionOutcome:
    p_1: nx.Tensor
    p_2: nx.Tensor
    v_1: nx.Tensor
    v_2: nx.Tensor
    u_1: nx.Tensor
    u_2: nx.Tensor
    p_ans: nx.Tensor
    predicted_class: int
    confidence: float
    layers: list = field(default_factory=list, repr=False)  # (p, v, u) per layer


def attention_logits(V, query, lp):
    """Per-region scores W_p tanh(W_V V (+) (W_R q + b_R)) + b_p as a d x 1 column."""
    k, m = lp.w_v.shape
    if V.rows != m or query.shape != (m, 1) or lp.w_r.shape != (k, m):
        raise DimensionError(
            f"attention layer k x m = {k}x{m} cannot take V {V.shape} with query {query.shape}"
        )
    h = nx.tanh_elem(
        nx.broadcast_add_columns(nx.matmul(lp.w_v, V), nx.add(nx.matmul(lp.w_r, query), lp.b_r))
    )
    scores = nx.broadcast_add_columns(nx.matmul(lp.w_p, h), lp.b_p)  # 1 x d
    return nx.transpose(scores)


def attend(V, p, query):
    """v = V p (attention-weighted sum of region columns), u = v + query."""
    v = nx.matmul(V, p)
    return v, nx.add(v, query)


def attention_layer(V, query, lp):
    p = nx.softmax_vec(attention_logits(V, query, lp))
    v, u = attend(V, p, query)
    return p, v, u


def forward(V, R, params):
    """Run every attention layer, feeding each refined query to the next.

    With a single layer, p_2/v_2/u_2 alias the first layer's outputs.
    """
    if not params.layers:
        raise ValueError("at least one attention layer is required")
    query = R
    per_layer = []
    for lp in params.layers:
        p, v, query = attention_layer(V, query, lp)
        per_layer.append((p, v, query))
    if params.w_u.cols != query.rows:
        raise DimensionError(f"classifier {params.w_u.shape} cannot read query {query.shape}")
    p_ans = nx.softmax_vec(nx.add(nx.matmul(params.w_u, query), params.b_u))
    probs = p_ans.data[:, 0]
    cls = int(np.argmax(probs))
    (p1, v1, u1), (p2, v2, u2) = per_layer[0], per_layer[-1]
    return AttentionOutcome(p1, p2, v1, v2, u1, u2, p_ans, cls, float(probs[cls]), per_layer)


class CorrectionTable:
    """(class id, zone id) -> [(action id, probability), ...]."""

    def __init__(self, entries=None):
        self.entries = {}
        for key, dist in (entries or {}).items():
            self.set(key[0], key[1], dist)

    def set(self, class_id, zone, dist):
        dist = [(int(a), float(p)) for a, p in dist]
        if not dist:
            raise ValueError(f"empty action distribution for class={class_id} zone={zone}")
        probs = np.array([p for _, p in dist])
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"action probabilities for class={class_id} zone={zone} are not a distribution")
        self.entries[(int(class_id), int(zone))] = dist

    def lookup(self, class_id, zone):
        try:
            return self.entries[(int(class_id), int(zone))]
        except KeyError:
            raise NoCorrectionError(class_id, zone) from None

    def best(self, class_id, zone):
        """Most probable action; ties go to the lowest action id."""
        return min(self.lookup(class_id, zone), key=lambda ap: (-ap[1], ap[0]))[0]

    def to_list(self):
        return [[c, z, [[a, p] for a, p in dist]] for (c, z), dist in sorted(self.entries.items())]

    @classmethod
    def from_list(cls, rows):
        table = cls()
        for c, z, dist in rows:
            table.set(c, z, dist)
        return table

    def __eq__(self, other):
        return isinstance(other, CorrectionTable) and self.entries == other.entries

    def __len__(self):
        return len(self.entries)


def recommend_correction(outcome, rows, cols, table, edge_filter=EdgeFilterSpec()):
    """Pick the correction for the predicted class at the zone the model attends to."""
    attn = outcome.p_2 if edge_filter is None else apply_edge_filter(outcome.p_2, rows, cols, edge_filter)
    region = int(np.argmax(attn.data[:, 0]))
    return table.best(outcome.predicted_class, zone_of(region, rows, cols))
