"""Training objectives: pull-to-mean over instance segments, and mask BCE."""

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .embedding import EmbeddingField, flatten_rows

BCE_CLAMP = 1e-7


class SegmentSet:
    """Foreground instance pixel sets, background held separately.

    ``segments`` is a list of 1-d linear pixel index arrays S_1..S_K;
    ``background`` holds the complementary indices. Segments must be pairwise
    disjoint, non-empty, and together with the background cover every pixel.
    """

    def __init__(self, segments, background, total_pixels):
        segs = [np.asarray(s, dtype=np.intp).ravel() for s in segments]
        bg = np.asarray(background, dtype=np.intp).ravel()
        for s in segs:
            if s.size == 0:
                raise ValueError("empty segment")
        counts = np.zeros(total_pixels, dtype=np.intp)
        for s in segs + [bg]:
            counts[s] += 1
        if not np.all(counts == 1):
            raise ValueError("segments plus background must partition the pixels")
        self.segments = segs
        self.background = bg
        self.total_pixels = total_pixels

    @classmethod
    def from_labels(cls, labels):
        """Build from an integer label map; 0 is background, 1..K instances."""
        arr = np.asarray(getattr(labels, "labels", labels))
        flat = arr.reshape(-1)
        ids = [int(k) for k in np.unique(flat) if k > 0]
        segments = [np.flatnonzero(flat == k) for k in ids]
        return cls(segments, np.flatnonzero(flat == 0), flat.size)

    def __len__(self):
        return len(self.segments)


def pull_to_mean_loss(field, segs, eps=1e-8, include_background=False):
    """Sum over segments of the mean unsquared distance to the segment mean.

    For each segment S the term is (1/|S|) * sum_u sqrt(||psi_u - m_S||^2 + eps)
    with m_S the segment's mean embedding. Distances are not squared, so one
    far-off pixel cannot dominate training. There is no explicit push term
    between segments; with position mixed into the embeddings, pulling each
    segment to its own mean is enough to separate them. eps > 0 keeps the
    square root differentiable when a segment is already perfectly tight.

    Background pixels are ignored unless ``include_background`` adds them as
    one extra segment; the loss is then and only then sensitive to them.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    values = field.values if isinstance(field, EmbeddingField) else field
    if values.data.ndim == 3:
        rows = flatten_rows(values)
    elif values.data.ndim == 2:
        rows = values
    else:
        raise ValueError("expected [D,H,W] field values or [N,D] rows")

    groups = list(segs.segments)
    if include_background:
        if segs.background.size == 0:
            raise ValueError("empty segment")
        groups.append(segs.background)

    total = None
    for idx in groups:
        if len(idx) == 0:
            raise ValueError("empty segment")
        sel = T.index_select(rows, 0, idx)
        center = T.mean(sel, axes=0, keepdims=True)
        dev = T.sub(sel, T.broadcast_to(center, sel.data.shape))
        term = T.mean(T.l2norm_rows(dev, eps))
        total = term if total is None else T.add(total, term)
    if total is None:
        raise ValueError("no segments to evaluate")
    return total


def mask_bce(kernel_row, gt_mask):
    """Mean binary cross entropy between per-pixel probabilities and a 0/1 mask.

    Probabilities are clamped 1e-7 away from {0, 1} so a saturated kernel
    cannot produce infinite loss.
    """
    k = kernel_row if isinstance(kernel_row, Tensor) else Tensor(kernel_row)
    m = np.asarray(getattr(gt_mask, "data", gt_mask), dtype=np.float64).ravel()
    if k.data.size != m.size:
        raise ValueError(f"probability row has {k.data.size} entries, mask {m.size}")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask must be binary")
    flat = T.reshape(k, (m.size,))
    kc = T.clamp(flat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    mt = Tensor(m)
    pos = T.mul(mt, T.log(kc))
    neg = T.mul(Tensor(1.0 - m), T.log(T.sub(1.0, kc)))
    return T.mul(T.mean(T.add(pos, neg)), -1.0)
