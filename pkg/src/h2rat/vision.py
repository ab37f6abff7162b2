"""Region features: projection into the shared m-dim space and the rim filter.

A region grid stores raw features column-per-region (f x d) with
region index = row * cols + col. The convolutional backbone that would
produce them is replaced by either the synthetic generator or a feature file.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from h2rat import binio
from h2rat import numerics as nx
from h2rat.errors import DimensionError, FormatError

FEATURE_MAGIC = b"H2RF"
FEATURE_VERSION = 1

FULL_GEOMETRY = (14, 14, 512)  # 448x448 frame cut into 32x32-pixel regions, 512 channels
DESK_GEOMETRY = (4, 4, 16)


@dataclass
class RegionGrid:
    rows: int
    cols: int
    features: np.ndarray  # f x d
    source: str = "synthetic"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[1] != self.rows * self.cols:
            raise DimensionError(
                f"features of shape {self.features.shape} do not match a {self.rows}x{self.cols} grid"
            )
        if self.source not in ("synthetic", "file"):
            raise ValueError(f"unknown region source {self.source!r}")

    @property
    def d(self):
        return self.rows * self.cols

    @property
    def f(self):
        return self.features.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, RegionGrid)
            and (self.rows, self.cols, self.source) == (other.rows, other.cols, other.source)
            and np.array_equal(self.features, other.features)
        )


@dataclass
class ProjectionParams:
    w: nx.Tensor  # m x f
    b: nx.Tensor  # m x 1


@dataclass(frozen=True)
class EdgeFilterSpec:
    border_width: int = 1

    def validate(self, rows, cols):
        if self.border_width < 0 or 2 * self.border_width >= min(rows, cols):
            raise DimensionError(
                f"border width {self.border_width} leaves no interior on a {rows}x{cols} grid"
            )


def project_regions(grid, params):
    """tanh(W F + b), one column per region."""
    feats = grid.features if isinstance(grid, RegionGrid) else grid
    feats = feats if isinstance(feats, nx.Tensor) else nx.Tensor(feats)
    if params.w.cols != feats.rows:
        raise DimensionError(f"projection {params.w.shape} cannot map features {feats.shape}")
    return nx.tanh_elem(nx.broadcast_add_columns(nx.matmul(params.w, feats), params.b))


def rim_mask(rows, cols, border_width=1):
    """Boolean vector of length rows*cols, True on the outer ``border_width`` rings."""
    r = np.arange(rows)[:, None]
    c = np.arange(cols)[None, :]
    bw = border_width
    rim = (r < bw) | (r >= rows - bw) | (c < bw) | (c >= cols - bw)
    return rim.reshape(-1)


def apply_edge_filter(attn, rows, cols, spec=EdgeFilterSpec()):
    """Zero the rim of an attention map and renormalise the interior.

    If the interior carries no mass at all the result is uniform over the
    interior, so downstream argmax/heatmaps stay well defined.
    """
    p = attn.data if isinstance(attn, nx.Tensor) else np.asarray(attn, dtype=np.float64)
    p = p.reshape(-1)
    if p.size != rows * cols:
        raise DimensionError(f"attention of length {p.size} does not match a {rows}x{cols} grid")
    if (p < 0).any():
        raise ValueError("attention map has negative entries")
    spec.validate(rows, cols)
    interior = ~rim_mask(rows, cols, spec.border_width)
    out = np.where(interior, p, 0.0)
    total = out.sum()
    if total > 0:
        out = out / total
    else:
        out = interior / interior.sum()
    return nx.Tensor(out.reshape(-1, 1))


def zone_of(region, rows, cols):
    """Quadrant of a region: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right."""
    r, c = divmod(int(region), cols)
    return 2 * int(2 * r >= rows) + int(2 * c >= cols)


ZONE_NAMES = ("top-left", "top-right", "bottom-left", "bottom-right")


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------


def encode_features(grid):
    w = binio.Writer()
    w.raw(FEATURE_MAGIC)
    w.u32(FEATURE_VERSION)
    w.u32(grid.rows)
    w.u32(grid.cols)
    w.u32(grid.f)
    # region-major: all f values of region 0, then region 1, ...
    w.f32(grid.features.T.reshape(-1))
    return w.getvalue()


def decode_features(buf):
    r = binio.open_header(buf, FEATURE_MAGIC, FEATURE_VERSION, "feature file")
    rows, cols, f = r.u32(), r.u32(), r.u32()
    if rows == 0 or cols == 0 or f == 0:
        raise FormatError(f"feature file: degenerate geometry {rows}x{cols}x{f}")
    data = r.f32(rows * cols * f)
    if r.remaining():
        raise FormatError(f"feature file: {r.remaining()} unexpected trailing bytes")
    feats = data.reshape(rows * cols, f).T.copy()
    return RegionGrid(rows, cols, feats, source="file")


def save_features(grid, path):
    Path(path).write_bytes(encode_features(grid))


def load_features(path):
    return decode_features(Path(path).read_bytes())
