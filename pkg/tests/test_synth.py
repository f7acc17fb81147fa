import numpy as np
import pytest

from semiconv.tensor import Tensor, NumericError
from semiconv.embedding import EmbeddingField, attach_coords
from semiconv.synth import (InstanceLabeling, Scene, TrainConfig, build_field,
                            controlled_pair, decode_kmeans, generate_scene,
                            load_scene, make_model, save_scene, scene_from_json,
                            scene_to_json, score, train)

DISC3_PIXELS = 29  # lattice points with dx^2 + dy^2 <= 9, counted by hand


def rows_field(rows):
    arr = np.asarray(rows, dtype=float)
    return EmbeddingField(Tensor(arr.T.reshape(arr.shape[1], 1, arr.shape[0])),
                          "convolutional")


def small_scene(rows=2, cols=2, spacing=12, seed=0):
    return generate_scene(rows, cols, dot_radius=3, spacing=spacing, seed=seed)


def quick_cfg(**kw):
    base = dict(dims=4, epochs=60, seed=0)
    base.update(kw)
    return TrainConfig(**base)


# -- scene generation ---------------------------------------------------------

def test_single_dot():
    scene = generate_scene(1, 1, dot_radius=3, spacing=16)
    assert scene.gt.K == 1
    assert np.count_nonzero(scene.gt.labels) == DISC3_PIXELS
    assert scene.shape == (16, 16)


def test_grid_scene_counts():
    scene = generate_scene(4, 4, dot_radius=3, spacing=16)
    assert scene.gt.K == 16
    assert scene.shape == (64, 64)
    assert np.count_nonzero(scene.gt.labels) == 16 * DISC3_PIXELS
    for k in range(1, 17):
        assert np.count_nonzero(scene.gt.labels == k) == DISC3_PIXELS
    # image is the indicator of the foreground
    assert np.array_equal(scene.image.data[0] > 0, scene.gt.labels > 0)


def test_scene_is_exactly_periodic():
    scene = generate_scene(3, 2, dot_radius=2, spacing=10)
    img = scene.image.data[0]
    assert np.array_equal(img, np.roll(img, (10, 0), axis=(0, 1)))
    assert np.array_equal(img, np.roll(img, (0, 10), axis=(0, 1)))


def test_scene_determinism_and_noise():
    a = generate_scene(2, 2, 3, 16, img_noise_std=0.1, seed=5)
    b = generate_scene(2, 2, 3, 16, img_noise_std=0.1, seed=5)
    assert np.array_equal(a.image.data, b.image.data)
    c = generate_scene(2, 2, 3, 16, img_noise_std=0.1, seed=6)
    assert not np.array_equal(a.image.data, c.image.data)


def test_scene_rejects_overlap():
    with pytest.raises(ValueError):
        generate_scene(2, 2, dot_radius=8, spacing=16)
    with pytest.raises(ValueError):
        generate_scene(0, 2, dot_radius=3, spacing=16)


def test_instance_labeling_validation():
    with pytest.raises(ValueError):
        InstanceLabeling(np.array([[0, 2], [2, 0]]))   # id 1 missing
    with pytest.raises(ValueError):
        InstanceLabeling(np.array([[0.5, 1.0]]))       # non-integer
    with pytest.raises(ValueError):
        InstanceLabeling(np.array([[-1, 1]]))


# -- training -----------------------------------------------------------------

def test_zero_epochs_keeps_init():
    scene = small_scene()
    cfg = quick_cfg(epochs=0)
    model, losses = train(scene, cfg)
    fresh = make_model(cfg)
    assert losses == []
    for a, b in zip(model.params(), fresh.params()):
        assert np.array_equal(a.data, b.data)


def test_semiconv_training_reduces_loss():
    scene = small_scene()
    model, losses = train(scene, quick_cfg(mode="semiconv", epochs=150))
    assert losses[-1] < 0.1 * losses[0]


def test_conv_embeddings_collide_after_training():
    scene = small_scene()
    cfg = quick_cfg(mode="conv", epochs=30)
    model, _ = train(scene, cfg)
    phi = model.forward(scene.image).data
    sp = scene.meta["spacing"]
    # dots are periodic translates: features at corresponding pixels match
    ref = phi[:, 0:sp, 0:sp]
    for i in range(scene.meta["rows"]):
        for j in range(scene.meta["cols"]):
            block = phi[:, i * sp:(i + 1) * sp, j * sp:(j + 1) * sp]
            assert np.max(np.abs(block - ref)) < 1e-6


def test_controlled_pair_shares_init():
    scene = small_scene()
    (conv_model, _), (semi_model, _) = controlled_pair(scene, quick_cfg(epochs=0))
    for a, b in zip(conv_model.params(), semi_model.params()):
        assert np.array_equal(a.data, b.data)


def test_divergence_reports_step():
    scene = small_scene()
    bad = Scene(Tensor(np.full_like(scene.image.data, np.inf)), scene.gt, scene.meta)
    with np.errstate(invalid="ignore"):
        with pytest.raises(NumericError, match="step 0"):
            train(bad, quick_cfg(epochs=3))


def test_train_config_validation():
    for bad in (dict(mode="hybrid"), dict(lr=0.0), dict(epochs=-1),
                dict(momentum=1.0)):
        with pytest.raises(ValueError):
            cfg = quick_cfg()
            for k, v in bad.items():
                setattr(cfg, k, v)
            cfg.validate()


# -- k-means decoding ----------------------------------------------------------

def test_kmeans_two_blobs_exact():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 0.05, size=(40, 2))
    b = rng.normal(10.0, 0.05, size=(60, 2)) + np.array([0.0, 5.0])
    rows = np.vstack([a, b])
    fg = np.ones(100, dtype=bool)
    out = decode_kmeans(rows_field(rows), fg.reshape(1, 100), K=2, seed=0)
    lab = out.labels.reshape(-1)
    assert len(set(lab[:40])) == 1
    assert len(set(lab[40:])) == 1
    assert lab[0] != lab[99]


def test_kmeans_k1():
    rows = np.random.default_rng(1).standard_normal((20, 3))
    fg = np.ones(20, dtype=bool).reshape(4, 5)
    out = decode_kmeans(rows_field(rows), fg, K=1, seed=0)
    assert np.all(out.labels == 1)


def test_kmeans_respects_background():
    rows = np.random.default_rng(2).standard_normal((12, 2))
    fg = np.zeros(12, dtype=bool)
    fg[3:9] = True
    out = decode_kmeans(rows_field(rows), fg.reshape(3, 4), K=2, seed=0)
    assert np.all(out.labels.reshape(-1)[~fg] == 0)
    assert np.all(out.labels.reshape(-1)[fg] > 0)


def test_kmeans_deterministic():
    rows = np.random.default_rng(3).standard_normal((50, 4))
    fg = np.ones(50, dtype=bool).reshape(5, 10)
    a = decode_kmeans(rows_field(rows), fg, K=5, seed=9)
    b = decode_kmeans(rows_field(rows), fg, K=5, seed=9)
    assert np.array_equal(a.labels, b.labels)


def test_kmeans_validation():
    rows = np.zeros((4, 2))
    fg = np.ones(4, dtype=bool).reshape(2, 2)
    with pytest.raises(ValueError):
        decode_kmeans(rows_field(rows), fg, K=0)
    with pytest.raises(ValueError):
        decode_kmeans(rows_field(rows), fg, K=5)
    with pytest.raises(ValueError):
        decode_kmeans(rows_field(rows), np.zeros((2, 2), dtype=bool), K=1)


def test_kmeans_identical_points():
    # degenerate: every point equal; seeding must not divide by zero
    rows = np.ones((10, 2))
    fg = np.ones(10, dtype=bool).reshape(2, 5)
    out = decode_kmeans(rows_field(rows), fg, K=3, seed=0)
    assert out.labels.shape == (2, 5)


# -- scoring --------------------------------------------------------------------

def test_score_perfect():
    scene = small_scene()
    out = score(scene.gt, scene.gt)
    assert out == {"mean_iou": 1.0, "purity": 1.0}


def test_score_single_cluster_purity():
    scene = generate_scene(4, 4, dot_radius=3, spacing=16)
    merged = np.where(scene.gt.labels > 0, 1, 0).astype(np.int32)
    out = score(InstanceLabeling(merged), scene.gt)
    assert out["purity"] == 1.0 / 16.0
    assert out["mean_iou"] < 0.1


def test_score_label_permutation_invariant():
    scene = small_scene()
    perm = np.array([0, 3, 1, 4, 2])  # relabel 1..4
    out = score(InstanceLabeling(perm[scene.gt.labels]), scene.gt)
    assert out == {"mean_iou": 1.0, "purity": 1.0}


def test_score_shape_mismatch():
    a = InstanceLabeling(np.ones((2, 2), dtype=int))
    b = InstanceLabeling(np.ones((2, 3), dtype=int))
    with pytest.raises(ValueError):
        score(a, b)


def test_score_greedy_matching_one_to_one():
    gt = InstanceLabeling(np.array([[1, 1, 2, 2]]))
    pred = InstanceLabeling(np.array([[1, 1, 1, 2]]))
    out = score(pred, gt)
    # pred 1 matches gt 1 (iou 2/3), pred 2 matches gt 2 (iou 1/2)
    assert abs(out["mean_iou"] - (2.0 / 3.0 + 0.5) / 2.0) < 1e-12


# -- serialization ----------------------------------------------------------------

def test_scene_json_round_trip(tmp_path):
    scene = generate_scene(2, 3, dot_radius=2, spacing=9, seed=4)
    doc = scene_to_json(scene)
    back = scene_from_json(doc)
    assert np.array_equal(back.image.data, scene.image.data)
    assert np.array_equal(back.gt.labels, scene.gt.labels)
    assert back.meta["spacing"] == 9

    path = tmp_path / "scene.json"
    save_scene(scene, path)
    again = load_scene(path)
    assert np.array_equal(again.gt.labels, scene.gt.labels)


def test_scene_json_rejects_truncated():
    doc = scene_to_json(small_scene())
    doc["h"] = doc["h"] + 1
    with pytest.raises(ValueError):
        scene_from_json(doc)


# -- end to end on a small grid ---------------------------------------------------

def test_small_end_to_end_contrast():
    scene = generate_scene(2, 2, dot_radius=3, spacing=14, seed=0)
    cfg = quick_cfg(epochs=150, dims=6)
    (conv_model, _), (semi_model, _) = controlled_pair(scene, cfg)
    fg = scene.gt.foreground_mask()

    semi_field = build_field(semi_model, scene.image, "semiconv")
    semi = score(decode_kmeans(semi_field, fg, scene.gt.K, seed=0), scene.gt)
    conv_field_ = build_field(conv_model, scene.image, "conv")
    conv = score(decode_kmeans(conv_field_, fg, scene.gt.K, seed=0), scene.gt)

    assert semi["mean_iou"] > conv["mean_iou"]
    assert semi["mean_iou"] > 0.8
