"""Synthetic dot-grid benchmark: generate, train, decode, score.

The scene is a grid of identical discs, which is the worst case for
translation-equivariant features: every dot looks exactly the same, so a
purely convolutional embedding cannot tell them apart and k-means produces
near-random instance assignments. Mixing pixel coordinates into the
embeddings resolves the ambiguity and the same pipeline separates the dots
almost perfectly. Both runs share seeds, initial weights, and every config
knob except the coordinate mixing, so the contrast isolates that one change.
"""

import base64
import json
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .tensor import Tensor, NumericError
from .backbone import Backbone, BackboneConfig
from .embedding import attach_coords, conv_field, field_rows
from .losses import SegmentSet, pull_to_mean_loss


class InstanceLabeling:
    """Integer instance id per pixel: 0 is background, 1..K are instances."""

    def __init__(self, labels, K=None):
        arr = np.asarray(labels)
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("labels must be integers")
        k = int(arr.max()) if K is None else int(K)
        present = set(np.unique(arr).tolist())
        if arr.min() < 0 or (present - set(range(k + 1))):
            raise ValueError(f"label values must lie in [0, {k}]")
        missing = [i for i in range(1, k + 1) if i not in present]
        if missing:
            raise ValueError(f"instance ids {missing} have no pixels")
        self.labels = arr
        self.K = k

    @property
    def shape(self):
        return self.labels.shape

    def foreground_mask(self):
        return self.labels > 0


class Scene:
    """Grayscale image plus its ground-truth instance labeling."""

    def __init__(self, image, gt, meta):
        self.image = image        # Tensor [1,H,W]
        self.gt = gt              # InstanceLabeling
        self.meta = dict(meta)

    @property
    def shape(self):
        return self.image.data.shape[1:]


@dataclass
class TrainConfig:
    mode: str = "semiconv"         # "semiconv" or "conv"
    dims: int = 8
    epochs: int = 2000
    lr: float = 0.03
    lr_decay: float = 0.02         # lr_t = lr / (1 + lr_decay * t)
    momentum: float = 0.0
    seed: int = 0
    eps: float = 1e-8
    padding: str = "circular"
    head_grad_scale: float = 1.0
    include_background: bool = False

    def validate(self):
        if self.mode not in ("semiconv", "conv"):
            raise ValueError(f"unknown mode '{self.mode}'")
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0 and lr positive")
        if self.lr_decay < 0:
            raise ValueError("lr_decay must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def generate_scene(rows, cols, dot_radius=3, spacing=32, img_noise_std=0.0, seed=0):
    """Regular grid of identical filled discs on a black background.

    The image extent is rows*spacing by cols*spacing, so with circular
    padding the scene is exactly periodic: every dot is a bit-identical
    translate of every other. Requires spacing > 2*dot_radius so dots stay
    disjoint.
    """
    if rows < 1 or cols < 1 or dot_radius < 1:
        raise ValueError("rows, cols, dot_radius must be positive")
    if spacing <= 2 * dot_radius:
        raise ValueError("dots overlap: need spacing > 2*dot_radius")
    h, w = rows * spacing, cols * spacing
    yy, xx = np.mgrid[0:h, 0:w]
    image = np.zeros((h, w))
    labels = np.zeros((h, w), dtype=np.int32)
    for i in range(rows):
        for j in range(cols):
            cy = spacing // 2 + i * spacing
            cx = spacing // 2 + j * spacing
            disc = (xx - cx) ** 2 + (yy - cy) ** 2 <= dot_radius ** 2
            image[disc] = 1.0
            labels[disc] = i * cols + j + 1
    if img_noise_std > 0:
        rng = np.random.default_rng(seed)
        image = image + rng.normal(0.0, img_noise_std, size=image.shape)
    meta = {"rows": rows, "cols": cols, "dot_radius": dot_radius,
            "spacing": spacing, "img_noise_std": img_noise_std, "seed": seed}
    return Scene(Tensor(image[None]), InstanceLabeling(labels), meta)


def build_field(model, image, mode):
    phi = model.forward(image)
    return attach_coords(phi) if mode == "semiconv" else conv_field(phi)


def make_model(cfg, in_channels=1):
    return Backbone(BackboneConfig(in_channels=in_channels, dims=cfg.dims,
                                   padding=cfg.padding, seed=cfg.seed,
                                   head_grad_scale=cfg.head_grad_scale))


def sgd_step(params, lr, momentum=0.0, velocity=None):
    """In-place SGD update; returns the (possibly fresh) velocity buffers."""
    if momentum > 0 and velocity is None:
        velocity = [np.zeros_like(p.data) for p in params]
    for i, p in enumerate(params):
        if p.grad is None:
            continue
        if momentum > 0:
            velocity[i] = momentum * velocity[i] + p.grad
            p.data -= lr * velocity[i]
        else:
            p.data -= lr * p.grad
    return velocity


def train(scene, cfg, extra_loss=None, extra_params=()):
    """Fit the backbone to the scene by pulling each instance to one embedding.

    Returns (model, losses). ``extra_loss(field) -> Tensor`` lets callers add
    a term to the objective (and ``extra_params`` its learnables) without
    changing anything else about the loop; with no extra term the trajectory
    depends only on cfg.

    Divergence (NaN/Inf anywhere in a step) raises NumericError with the
    offending step number.
    """
    cfg.validate()
    segs = SegmentSet.from_labels(scene.gt)
    model = make_model(cfg, in_channels=scene.image.data.shape[0])
    params = model.params() + list(extra_params)
    losses = []
    velocity = None
    for step in range(cfg.epochs):
        try:
            field = build_field(model, scene.image, cfg.mode)
            loss = pull_to_mean_loss(field, segs, cfg.eps,
                                     include_background=cfg.include_background)
            if extra_loss is not None:
                loss = T.add(loss, extra_loss(field))
            for p in params:
                p.grad = None
            loss.backward()
            step_lr = cfg.lr / (1.0 + cfg.lr_decay * step)
            velocity = sgd_step(params, step_lr, cfg.momentum, velocity)
        except NumericError as err:
            raise NumericError(f"training diverged at step {step}: {err}") from err
        losses.append(loss.item())
    return model, losses


def decode_kmeans(field, fg_mask, K, seed=0, max_iter=300, tol=1e-6):
    """Cluster foreground embeddings into K instances.

    Deterministic k-means: careful seeding (distance-weighted, from the given
    rng), then standard mean/assign iterations until centroids move less than
    tol. An emptied cluster is reseeded on the point farthest from its
    centroid. Background pixels keep label 0; clusters get ids 1..K.
    """
    mask = np.asarray(fg_mask, dtype=bool)
    idx = np.flatnonzero(mask.reshape(-1))
    if K < 1:
        raise ValueError("K must be >= 1")
    if idx.size == 0:
        raise ValueError("empty foreground")
    if K > idx.size:
        raise ValueError(f"K={K} exceeds {idx.size} foreground pixels")
    pts = field_rows(field).data[idx]

    rng = np.random.default_rng(seed)
    centers = np.empty((K, pts.shape[1]))
    centers[0] = pts[rng.integers(idx.size)]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a center
            centers[k:] = pts[rng.integers(idx.size, size=K - k)]
            break
        centers[k] = pts[rng.choice(idx.size, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((pts - centers[k]) ** 2, axis=1))

    assign = np.zeros(idx.size, dtype=np.intp)
    for _ in range(max_iter):
        dists = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        assign = np.argmin(dists, axis=1)
        moved = 0.0
        for k in range(K):
            sel = assign == k
            if not np.any(sel):
                far = int(np.argmax(dists[np.arange(idx.size), assign]))
                new = pts[far]
            else:
                new = pts[sel].mean(axis=0)
            moved = max(moved, float(np.linalg.norm(new - centers[k])))
            centers[k] = new
        if moved < tol:
            break

    labels = np.zeros(mask.size, dtype=np.int32)
    labels[idx] = assign + 1
    return InstanceLabeling(labels.reshape(mask.shape))


def score(pred, gt):
    """Overlap metrics between a predicted and true labeling.

    mean_iou: greedily match predicted to true instances in descending IoU
    order, one-to-one, then average the matched IoU over true instances
    (unmatched ones count 0). Greedy matching can only understate the optimal
    assignment, so thresholds remain honest. purity: the fraction of true
    foreground pixels whose predicted cluster has that pixel's instance as
    its majority.
    """
    p = pred.labels.reshape(-1)
    g = gt.labels.reshape(-1)
    if p.size != g.size:
        raise ValueError("labelings cover different grids")

    pairs = []
    for gk in range(1, gt.K + 1):
        gsel = g == gk
        for pk in range(1, pred.K + 1):
            psel = p == pk
            inter = np.count_nonzero(gsel & psel)
            if inter == 0:
                continue
            union = np.count_nonzero(gsel | psel)
            pairs.append((inter / union, gk, pk))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_g, used_p = set(), set()
    iou_sum = 0.0
    for iou, gk, pk in pairs:
        if gk in used_g or pk in used_p:
            continue
        used_g.add(gk)
        used_p.add(pk)
        iou_sum += iou
    mean_iou = iou_sum / gt.K

    fg = g > 0
    correct = 0
    for pk in range(1, pred.K + 1):
        sel = (p == pk) & fg
        if not np.any(sel):
            continue
        ids, counts = np.unique(g[sel], return_counts=True)
        majority = ids[np.argmax(counts)]  # ties resolve to the lowest id
        correct += int(np.count_nonzero(g[sel] == majority))
    purity = correct / np.count_nonzero(fg)
    return {"mean_iou": mean_iou, "purity": purity}


def controlled_pair(scene, cfg):
    """Train conv and semiconv runs that differ only in coordinate mixing."""
    conv_cfg = replace(cfg, mode="conv")
    semi_cfg = replace(cfg, mode="semiconv")
    conv_model, conv_losses = train(scene, conv_cfg)
    semi_model, semi_losses = train(scene, semi_cfg)
    return (conv_model, conv_losses), (semi_model, semi_losses)


# -- scene serialization ------------------------------------------------------

def scene_to_json(scene):
    h, w = scene.shape
    img32 = np.ascontiguousarray(scene.image.data[0], dtype="<f4")
    lab16 = np.ascontiguousarray(scene.gt.labels, dtype="<u2")
    doc = {"h": h, "w": w,
           "image": base64.b64encode(img32.tobytes()).decode("ascii"),
           "labels": base64.b64encode(lab16.tobytes()).decode("ascii")}
    doc.update(scene.meta)
    return doc


def scene_from_json(doc):
    h, w = int(doc["h"]), int(doc["w"])
    img = np.frombuffer(base64.b64decode(doc["image"]), dtype="<f4")
    lab = np.frombuffer(base64.b64decode(doc["labels"]), dtype="<u2")
    if img.size != h * w or lab.size != h * w:
        raise ValueError("scene payload does not match its declared extent")
    meta = {k: doc[k] for k in ("rows", "cols", "dot_radius", "spacing",
                                "img_noise_std", "seed") if k in doc}
    return Scene(Tensor(img.astype(np.float64).reshape(1, h, w)),
                 InstanceLabeling(lab.astype(np.int32).reshape(h, w)), meta)


def save_scene(scene, path):
    with open(path, "w") as fh:
        json.dump(scene_to_json(scene), fh, sort_keys=True)


def load_scene(path):
    with open(path) as fh:
        return scene_from_json(json.load(fh))
