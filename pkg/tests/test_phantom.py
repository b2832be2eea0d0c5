import numpy as np
import pandas as pd
import pytest

from pyvolatt.errors import ConfigurationError, ContractError, NumericError
from pyvolatt.phantom import (
    AblationDeck,
    ExperimentConfig,
    PhantomConfig,
    ToyModel,
    ToyModelConfig,
    TrainConfig,
    ablate,
    eval_predictions,
    gen_phantom,
    gen_phantoms,
    loss_trend_ok,
    persistence_classify,
    run_experiment,
    save_phantom,
    train_toy,
)
from pyvolatt.tensor import Tape, ops
from pyvolatt.volume import LESION, Volume, lesion_mask, liver_mask, read_mask, read_volume

SMALL = PhantomConfig(
    grid=(12, 24, 24),
    lesion_radius_mm=(2.0, 3.0),
    lesion_slices=(5, 7),
    n_lesions=1,
    distractor_rate=0.1,
)
TINY_MODEL = ToyModelConfig(channels=4, depth=1, bag_size=3, reduction=2, spatial_kernel=3)


def tiny_experiment(**changes):
    values = dict(
        phantom=SMALL,
        model=TINY_MODEL,
        train=TrainConfig(epochs=1),
        seeds=1,
        n_train=1,
        n_eval=1,
    )
    values.update(changes)
    return ExperimentConfig(**values)


def test_phantom_is_deterministic():
    a_vol, a_gt = gen_phantom(SMALL.replace(seed=3))
    b_vol, b_gt = gen_phantom(SMALL.replace(seed=3))
    assert a_vol == b_vol
    assert np.array_equal(a_gt, b_gt)
    c_vol, _ = gen_phantom(SMALL.replace(seed=4))
    assert not np.array_equal(a_vol.values, c_vol.values)


def test_noiseless_phantom_matches_labels():
    cfg = SMALL.replace(noise_sigma=0.0, distractor_rate=0.0, n_lesions=2, seed=5)
    volume, gt = gen_phantom(cfg)
    assert volume.intensity_space == "unit"
    assert np.array_equal(lesion_mask(gt), volume.values > cfg.threshold)
    liver_cut = 0.5 * (cfg.background_level + cfg.liver_level)
    assert np.array_equal(liver_mask(gt), volume.values > liver_cut)


def test_blob_persistence():
    cfg = SMALL.replace(noise_sigma=0.0, distractor_rate=0.5, seed=6)
    volume, gt, blobs = gen_phantom(cfg, return_blobs=True)
    bright = volume.values > cfg.threshold
    for blob in blobs:
        extent = blob.slices if blob.is_lesion else cfg.distractor_slices
        reach = blob.slices // 2 + 1
        lo = max(blob.center[0] - reach, 0)
        z = np.nonzero(bright[lo : blob.center[0] + reach + 1, blob.center[1], blob.center[2]])[0]
        assert len(z) == extent, f"blob at {blob.center} spans {len(z)} slices"
    assert sum(b.is_lesion for b in blobs) == 1
    assert np.all(gt[bright & ~lesion_mask(gt)] == 1), "distractors are labelled liver"


def test_persistence_classifier_separates_blobs():
    """Bright components persisting >= 5 slices are exactly the lesions."""
    for seed in range(20):
        cfg = PhantomConfig(seed=seed)
        volume, gt = gen_phantom(cfg)
        for voxels, is_lesion in persistence_classify(volume.values, cfg.threshold):
            labels = gt[tuple(voxels.T)]
            truth = np.mean(labels == LESION) > 0.5
            assert is_lesion == truth, f"seed {seed}: component of {len(voxels)} voxels misread"


def test_lesion_that_cannot_fit():
    cfg = PhantomConfig(grid=(6, 8, 8), lesion_radius_mm=(9.0, 9.0), lesion_slices=(5, 5))
    with pytest.raises(ConfigurationError):
        gen_phantom(cfg)


def test_phantom_config_validation():
    with pytest.raises(ConfigurationError):
        PhantomConfig(lesion_slices=(3, 7))
    with pytest.raises(ConfigurationError):
        PhantomConfig(distractor_slices=7)
    with pytest.raises(ConfigurationError):
        PhantomConfig(liver_level=0.9)
    assert abs(PhantomConfig().threshold - 0.65) <= 1e-12


def test_save_phantom(tmp_path):
    volume, gt = gen_phantom(SMALL)
    vol_path, msk_path = save_phantom(str(tmp_path), "p0", volume, gt)
    assert read_volume(vol_path).dims == SMALL.grid
    labels, spacing = read_mask(msk_path)
    assert np.array_equal(labels, gt) and spacing == SMALL.spacing_mm


def test_toy_model_shapes():
    volume, _ = gen_phantom(SMALL)
    model = ToyModel(TINY_MODEL)
    prob = model.predict_volume(volume)
    assert prob.shape == volume.dims
    assert np.all((prob > 0) & (prob < 1))
    assert model.forward(volume, 0).shape == (1, 24, 24)
    with pytest.raises(ConfigurationError):
        model.predict_volume(Volume(volume.values * 100, volume.spacing))


def test_toy_model_without_attention():
    model = ToyModel(ToyModelConfig(channels=4, depth=2, mode="none"))
    assert model.va is None
    assert len(model.parameters()) == 2 * 2 + 2
    assert model.va_parameters() == []


def test_same_seed_same_initialisation():
    a, b = ToyModel(TINY_MODEL), ToyModel(TINY_MODEL)
    for key, value in a.state().items():
        assert np.array_equal(value, b.state()[key]), key


def test_va_parameters_get_gradient_through_model():
    volume, gt = gen_phantom(SMALL)
    model = ToyModel(TINY_MODEL)
    z = SMALL.grid[0] // 2
    with Tape() as tape:
        loss = ops.bce_with_logits(model.forward(volume, z), lesion_mask(gt[z])[None], 4.0)
    tape.backward(loss)
    assert any(np.any(p.grad) for p in model.va_parameters()), "no gradient reached attention"
    assert np.any(model.head_weight.grad)


def test_score_components():
    prob = np.zeros((5, 5))
    prob[1:3, 1:3] = [[0.6, 0.9], [0.7, 0.55]]
    boxes, scores = ToyModel.score_components(prob)
    assert boxes.tolist() == [[1, 1, 2, 2]]
    assert scores.tolist() == [0.9]


def test_context_forward_matches_live_bag():
    volume, gt = gen_phantom(SMALL)
    model = ToyModel(TINY_MODEL)
    context = model.slab_features(volume)
    z = SMALL.grid[0] // 2
    live = model.forward(volume, z).data
    cached = model.forward(volume, z, context).data
    assert np.allclose(live, cached, rtol=0.0, atol=1e-12)
    with Tape() as tape:
        loss = ops.bce_with_logits(model.forward(volume, z, context), lesion_mask(gt[z])[None], 4.0)
    tape.backward(loss)
    assert any(np.any(p.grad) for p in model.va_parameters())
    assert np.any(model.backbone[0][0].grad), "no gradient reached the backbone"
    with pytest.raises(ContractError):
        model.forward(volume, z, context[:-1])


def test_initial_head_and_gates():
    model = ToyModel(TINY_MODEL)
    assert abs(model.head_bias.item() - np.log(0.05 / 0.95)) <= 1e-15
    assert np.all(model.va.channel.gate_bias.data == 2.0)
    assert np.all(model.va.spatial.gate_bias.data == 2.0)
    with pytest.raises(ConfigurationError):
        ToyModelConfig(prior=1.0)


def test_training_converges_on_separable_phantom():
    """Noiseless, distractor-free phantom with a wide intensity gap. The
    best constant predictor scores about 0.22 at the default positive
    weight, so a loss below 0.1 needs the lesion to be found."""
    cfg = PhantomConfig(
        grid=(12, 32, 32),
        n_lesions=1,
        lesion_radius_mm=(4.0, 4.0),
        lesion_slices=(5, 5),
        distractor_rate=0.0,
        noise_sigma=0.0,
        background_level=0.0,
        liver_level=0.1,
        blob_level=1.0,
    )
    model = ToyModel(ToyModelConfig(channels=8, depth=1, kernel_size=1, mode="none"))
    result = train_toy(model, gen_phantoms(cfg, [0]), TrainConfig(epochs=16, lr=1.0))
    curve = result.loss_curve
    assert len(curve) == 192
    first, last = np.mean(curve[:12]), np.mean(curve[-12:])
    assert last < 0.1, f"loss {last:.4f} after 192 steps"
    assert last < first
    assert result.trend_ok


def test_zero_learning_rate_keeps_parameters():
    data = gen_phantoms(SMALL, [1])
    model = ToyModel(TINY_MODEL)
    before = model.state()
    result = train_toy(model, data, TrainConfig(epochs=1, lr=0.0))
    assert len(result.loss_curve) == SMALL.grid[0]
    for key, value in model.state().items():
        assert np.array_equal(value, before[key]), f"{key} moved with lr = 0"


def test_training_is_deterministic():
    data = gen_phantoms(SMALL, [2])
    curves = []
    for _ in range(2):
        result = train_toy(ToyModel(TINY_MODEL), data, TrainConfig(epochs=1, seed=3))
        curves.append(result.loss_curve)
    assert curves[0] == curves[1]
    assert all(np.isfinite(curves[0]))


def test_diverged_training_names_epoch():
    data = gen_phantoms(SMALL, [1])
    model = ToyModel(TINY_MODEL)
    model.head_bias.data[:] = np.nan
    with pytest.raises(NumericError) as info:
        train_toy(model, data, TrainConfig(epochs=1))
    assert info.value.epoch == 0
    assert "epoch 0" in str(info.value)


def test_loss_trend():
    assert loss_trend_ok(np.linspace(1.0, 0.1, 40))
    assert not loss_trend_ok(np.linspace(0.1, 1.0, 40))
    assert loss_trend_ok([1.0, 2.0]), "short curves pass"


def test_eval_perfect_and_empty_predictions():
    phantoms = gen_phantoms(SMALL, [7, 8])
    gts = [gt for _, gt in phantoms]
    spacings = [v.spacing for v, _ in phantoms]

    perfect = eval_predictions([lesion_mask(g).astype(float) for g in gts], gts, spacings)
    assert perfect.report.dice_per_case == 1.0
    assert perfect.report.ap50 == 1.0
    assert perfect.report.froc == {0.5: 1.0, 1.0: 1.0, 2.0: 1.0}

    empty = eval_predictions([np.zeros(g.shape) for g in gts], gts, spacings)
    assert empty.report.dice_per_case == 0.0
    assert empty.report.ap50 == 0.0
    assert empty.report.froc == {0.5: 0.0, 1.0: 0.0, 2.0: 0.0}


def test_experiment_seeds_are_paired_and_disjoint():
    cfg = ExperimentConfig(seeds=3)
    assert cfg.run_seeds() == [12, 13, 14]
    train, held_out = cfg.phantom_seeds(12)
    assert not set(train) & set(held_out)
    assert cfg.phantom_seeds(12) == ExperimentConfig(seeds=5).phantom_seeds(12)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_run_experiment_is_repeatable(tmp_path):
    cfg = tiny_experiment()
    first, second = run_experiment(cfg), run_experiment(cfg)
    pd.testing.assert_frame_equal(first.per_seed, second.per_seed)
    assert first.median == second.median
    assert list(first.loss_curves.columns) == ["seed", "step", "loss"]
    first.write(str(tmp_path))
    for name in ("metrics.json", "per_seed.csv", "loss_curves.csv", "froc_curve.csv"):
        assert (tmp_path / name).exists(), name


def test_single_value_ablation(tmp_path):
    deck = ablate("attention_mode", ["none"], tiny_experiment())
    assert isinstance(deck, AblationDeck)
    assert len(deck.df) == 1
    assert list(deck.df.columns)[:2] == ["attention_mode", "Dice"]
    assert deck.rows()[0]["attention_mode"] == "none"
    deck.to_csv(str(tmp_path / "ablation.csv"))
    assert (tmp_path / "ablation.csv").exists()
    with pytest.raises(ConfigurationError):
        ablate("learning_rate", [0.1], tiny_experiment())


if __name__ == "__main__":
    test_persistence_classifier_separates_blobs()
