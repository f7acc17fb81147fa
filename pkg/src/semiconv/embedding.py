"""Embedding fields over a pixel grid, and the coordinate-mixing step.

A convolutional feature map knows nothing about where a pixel sits, so two
identical image patches produce identical features. Adding each pixel's own
(x, y) to the first two feature channels breaks that tie: the result is a
"semi-convolutional" field whose values can differ across repeated structures
while staying cheap to compute. Everything downstream (the pull-to-mean loss,
the affinity kernels, the decoders) consumes these fields.
"""

from functools import lru_cache

import numpy as np

from . import tensor as T
from .tensor import Tensor


@lru_cache(maxsize=16)
def _grid(h, w):
    g = np.zeros((2, h, w))
    g[0] = np.arange(w)[None, :]
    g[1] = np.arange(h)[:, None]
    g.setflags(write=False)
    return g


def coord_grid(h, w):
    """Pixel coordinates as a [2,H,W] array: channel 0 is x, channel 1 is y.

    Units are raw pixels with the origin at the top-left pixel center, so
    grid[0, y, x] == x and grid[1, y, x] == y exactly.
    """
    if h < 1 or w < 1:
        raise ValueError("grid extents must be positive")
    return _grid(int(h), int(w))


class EmbeddingField:
    """Per-pixel D-dimensional embeddings with a declared channel split.

    ``kind`` records whether pixel coordinates were mixed in. For a
    semiconvolutional field the first two channels are geometric (they carry
    position) and the rest are appearance; a convolutional field is all
    appearance.
    """

    def __init__(self, values, kind):
        if kind not in ("convolutional", "semiconvolutional"):
            raise ValueError(f"unknown field kind '{kind}'")
        if values.data.ndim != 3:
            raise ValueError("field values must be [D,H,W]")
        if kind == "semiconvolutional" and values.data.shape[0] < 2:
            raise ValueError("semiconvolutional fields need D >= 2")
        self.values = values
        self.kind = kind

    @property
    def dims(self):
        return self.values.data.shape[0]

    @property
    def spatial_shape(self):
        return self.values.data.shape[1:]

    @property
    def geometric_dims(self):
        return (0, 1) if self.kind == "semiconvolutional" else ()

    @property
    def appearance_dims(self):
        start = 2 if self.kind == "semiconvolutional" else 0
        return tuple(range(start, self.dims))

    def __repr__(self):
        return f"EmbeddingField(kind={self.kind}, shape={self.values.data.shape})"


def conv_field(phi):
    """Wrap a feature map as a purely convolutional field (no coordinates)."""
    return EmbeddingField(phi, "convolutional")


def attach_coords(phi):
    """Mix pixel location into a feature map: out[c] = phi[c] + (x, y, 0, ...).

    Channel 0 gains the pixel's x, channel 1 its y, all others pass through.
    Differentiable with an identity Jacobian, so gradients reach phi unchanged.
    """
    if phi.data.ndim != 3:
        raise ValueError("expected a [D,H,W] feature map")
    d, h, w = phi.data.shape
    if d < 2:
        raise ValueError("need at least 2 channels to carry coordinates")
    mix = np.zeros((d, h, w))
    mix[:2] = coord_grid(h, w)
    return EmbeddingField(T.add(phi, Tensor(mix)), "semiconvolutional")


def detach_coords(field):
    """Invert attach_coords, recovering the underlying feature map."""
    if field.kind != "semiconvolutional":
        raise ValueError("field carries no coordinates to remove")
    d, h, w = field.values.data.shape
    mix = np.zeros((d, h, w))
    mix[:2] = coord_grid(h, w)
    return T.sub(field.values, Tensor(mix))


def displacement_field(field):
    """Per-pixel offset vectors: geometric embedding minus the pixel's own position.

    When training succeeds, all pixels of one instance share an embedding
    value, so these vectors point from each pixel toward a common
    instance-specific location. Used for arrow rendering and diagnostics.
    """
    if field.kind != "semiconvolutional":
        raise ValueError("displacement is only defined for semiconvolutional fields")
    h, w = field.values.data.shape[1:]
    geo = T.index_select(field.values, 0, [0, 1])
    return T.sub(geo, Tensor(coord_grid(h, w)))


def flatten_rows(values):
    """Reshape a [D,H,W] map to [H*W, D] rows, row-major pixel order."""
    d = values.data.shape[0]
    return T.transpose2d(T.reshape(values, (d, -1)))


def field_rows(field):
    return flatten_rows(field.values)


def bilateral_rows(field):
    """Rows (u_x, u_y, appearance...) with raw coordinates in the geometric slots.

    This is the classic position-plus-appearance affinity vector: the learned
    displacement is discarded and the pixel's actual location used instead.
    """
    d, h, w = field.values.data.shape
    coords = Tensor(np.ascontiguousarray(
        coord_grid(h, w).reshape(2, h * w).T))
    app = list(field.appearance_dims)
    if not app:
        return coords
    app_rows = flatten_rows(T.index_select(field.values, 0, app))
    return T.concat([coords, app_rows], axis=1)


def check_margin(field, gt, M, sample_pairs=1000, seed=0):
    """Sampled diagnostic of instance separation in embedding space.

    Draws random same-instance and cross-instance pixel pairs and reports
    which fraction satisfies the separation that clustering needs: distance
    at most 1-M within an instance, at least 1+M between instances. The field
    is used as-is; scale embeddings before calling if needed.
    """
    if not (0.0 < M < 1.0):
        raise ValueError("M must lie in (0, 1)")
    if sample_pairs < 1:
        raise ValueError("sample_pairs must be positive")
    labels = np.asarray(getattr(gt, "labels", gt))
    vals = field.values.data.reshape(field.dims, -1)
    flat = labels.reshape(-1)
    ids = [int(k) for k in np.unique(flat) if k > 0]
    if len(ids) < 2:
        raise ValueError("need at least 2 foreground instances")
    pixels = {k: np.flatnonzero(flat == k) for k in ids}

    rng = np.random.default_rng(seed)
    within = between = 0
    for _ in range(sample_pairs):
        k = ids[rng.integers(len(ids))]
        pool = pixels[k]
        if pool.size >= 2:
            u, v = rng.choice(pool, size=2, replace=False)
        else:
            u = v = pool[0]
        if np.linalg.norm(vals[:, u] - vals[:, v]) <= 1.0 - M:
            within += 1
    for _ in range(sample_pairs):
        ka, kb = rng.choice(len(ids), size=2, replace=False)
        u = rng.choice(pixels[ids[ka]])
        v = rng.choice(pixels[ids[kb]])
        if np.linalg.norm(vals[:, u] - vals[:, v]) >= 1.0 + M:
            between += 1

    return {"satisfied_fraction_within": within / sample_pairs,
            "satisfied_fraction_between": between / sample_pairs}
