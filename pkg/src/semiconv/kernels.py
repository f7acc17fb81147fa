"""Affinity kernels over pixel embeddings and seed-based score fusion.

A kernel turns embedding distance into a similarity in (0, 1]. Given a score
map over a region, the fusion step picks a seed pixel, evaluates the kernel
row between the seed's embedding and every other pixel, and adds the
log-kernel to the scores. Pixels that embed far from the seed get pushed
down; the seed itself is untouched. Thresholding the resulting per-pixel
probabilities cuts out the seed's instance.
"""

import numpy as np

from . import tensor as T
from .tensor import Tensor, NORM_EPS
from .embedding import EmbeddingField, field_rows, bilateral_rows

FAMILIES = ("gaussian", "bilateral", "steered_laplacian")


class KernelParams:
    """Kernel family plus its scale.

    sigma is stored as log(sigma) so gradient steps can never push it out of
    the positive range; it is a learnable tensor for the steered Laplacian
    family (pass ``learnable`` to override).
    """

    def __init__(self, family="gaussian", sigma=1.0, learnable=None, eps=NORM_EPS):
        if family not in FAMILIES:
            raise ValueError(f"unknown kernel family '{family}'")
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        if eps < 0:
            raise ValueError("eps must be >= 0")
        if learnable is None:
            learnable = family == "steered_laplacian"
        self.family = family
        self.eps = float(eps)
        self.log_sigma = Tensor(np.log(sigma), requires_grad=bool(learnable))

    @property
    def sigma(self):
        return float(np.exp(self.log_sigma.data))

    def sigma_tensor(self):
        return T.exp(self.log_sigma)

    def learnables(self):
        return [self.log_sigma] if self.log_sigma.requires_grad else []

    def __repr__(self):
        return f"KernelParams(family={self.family}, sigma={self.sigma:.6g})"


class SeedFusionResult:
    """Output bundle of fuse_scores.

    fused_scores never exceed the input scores (the log-kernel is <= 0), and
    in hard mode the seed's own score passes through unchanged.
    """

    def __init__(self, seed_index, seed_embedding, fused_scores, kernel_row,
                 probabilities, mode, seed_weights=None):
        self.seed_index = seed_index
        self.seed_embedding = seed_embedding
        self.fused_scores = fused_scores
        self.kernel_row = kernel_row
        self.probabilities = probabilities
        self.mode = mode
        self.seed_weights = seed_weights

    def __repr__(self):
        return (f"SeedFusionResult(mode={self.mode}, seed={self.seed_index}, "
                f"n={self.fused_scores.data.size})")


def _as_vector(v, name):
    t = v if isinstance(v, Tensor) else Tensor(v)
    if t.data.ndim != 1:
        t = T.reshape(t, (t.data.size,))
    if name and t.data.size == 0:
        raise ValueError(f"{name} is empty")
    return t


def _sumsq(a, b):
    d = T.sub(a, b)
    return T.tsum(T.mul(d, d))


def gaussian_kernel(a, b):
    """exp(-||a-b||^2 / 2) as a scalar tensor; 1 exactly at zero distance."""
    a, b = _as_vector(a, "a"), _as_vector(b, "b")
    if a.data.size != b.data.size:
        raise ValueError("embedding dimensions differ")
    return T.exp(T.mul(_sumsq(a, b), -0.5))


def factorized_kernel(u, v, phi_g_u, phi_g_v, phi_a_u, phi_a_v):
    """Gaussian kernel split into a geometric and an appearance factor.

    The geometric factor compares steered positions u + phi_g; the appearance
    factor compares the remaining channels. Multiplying the two equals the
    plain Gaussian kernel on the stacked embedding vectors.
    """
    u, v = _as_vector(u, "u"), _as_vector(v, "v")
    gu, gv = _as_vector(phi_g_u, "phi_g_u"), _as_vector(phi_g_v, "phi_g_v")
    au, av = _as_vector(phi_a_u, None), _as_vector(phi_a_v, None)
    if not (u.data.size == v.data.size == gu.data.size == gv.data.size == 2):
        raise ValueError("geometric parts must be 2-d")
    if au.data.size != av.data.size:
        raise ValueError("appearance dimensions differ")
    geo = T.exp(T.mul(_sumsq(T.add(u, gu), T.add(v, gv)), -0.5))
    if au.data.size == 0:
        return geo
    app = T.exp(T.mul(_sumsq(au, av), -0.5))
    return T.mul(geo, app)


def shifted_norm(sumsq, eps):
    """sqrt(sumsq + eps) - sqrt(eps): zero exactly at zero, differentiable there.

    A plain eps inside the root would leave a sqrt(eps) residue at zero
    distance and the kernel value would fall short of 1; shifting the curve
    down restores K = 1 at zero while keeping the gradient finite.
    """
    return T.sub(T.sqrt(T.add(sumsq, eps)), float(np.sqrt(eps)))


def steered_laplacian(a, b, sigma, eps=NORM_EPS):
    """exp(-||a-b|| / sigma): heavier tails than the Gaussian, learnable scale."""
    a, b = _as_vector(a, "a"), _as_vector(b, "b")
    if a.data.size != b.data.size:
        raise ValueError("embedding dimensions differ")
    st = sigma if isinstance(sigma, Tensor) else Tensor(float(sigma))
    if not np.all(st.data > 0):
        raise ValueError("sigma must be positive")
    dist = shifted_norm(_sumsq(a, b), eps)
    return T.exp(T.mul(T.div(dist, st), -1.0))


def fuse_scores(scores, field, params, mode="hard"):
    """Combine per-pixel scores with kernel affinity to a seed pixel.

    ``field`` is an EmbeddingField or an [N, D] row tensor aligned with the
    scores. Hard mode seeds at the argmax score (ties break toward the lowest
    index); soft mode replaces the argmax with a softmax-weighted expectation
    of the embeddings, which keeps the whole fusion differentiable in the
    scores. Both modes add log K(seed, i) to score i and squash through a
    logistic to get per-pixel probabilities.

    For the bilateral family an EmbeddingField is converted to raw-coordinate
    rows; precomputed row tensors are used as given for every family.
    """
    if mode not in ("hard", "soft"):
        raise ValueError(f"unknown fusion mode '{mode}'")
    if isinstance(field, EmbeddingField):
        rows = bilateral_rows(field) if params.family == "bilateral" else field_rows(field)
    else:
        rows = field
    if rows.data.ndim != 2:
        raise ValueError("embedding rows must be [N, D]")
    s = _as_vector(scores, None)
    n, d = rows.data.shape
    if n == 0 or s.data.size == 0:
        raise ValueError("empty region")
    if s.data.size != n:
        raise ValueError(f"{s.data.size} scores for {n} pixels")

    seed_index = int(np.argmax(s.data))
    weights = None
    if mode == "hard":
        seed_emb = T.index_select(rows, 0, [seed_index])
    else:
        weights = T.softmax(s, axis=0)
        wcol = T.broadcast_to(T.reshape(weights, (n, 1)), (n, d))
        seed_emb = T.tsum(T.mul(wcol, rows), axes=0, keepdims=True)

    diff = T.sub(rows, T.broadcast_to(seed_emb, (n, d)))
    sumsq = T.tsum(T.mul(diff, diff), axes=1)
    if params.family == "steered_laplacian":
        dist = shifted_norm(sumsq, params.eps)
        log_kernel = T.mul(T.div(dist, params.sigma_tensor()), -1.0)
    else:
        log_kernel = T.mul(sumsq, -0.5)

    fused = T.add(s, log_kernel)
    return SeedFusionResult(
        seed_index=seed_index,
        seed_embedding=seed_emb,
        fused_scores=fused,
        kernel_row=T.exp(log_kernel),
        probabilities=T.sigmoid(fused),
        mode=mode,
        seed_weights=weights,
    )
