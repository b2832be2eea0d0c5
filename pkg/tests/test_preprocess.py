import numpy as np
import pytest

from pyvolatt.errors import ConfigurationError, ContractError
from pyvolatt.volume import (
    BagSpec,
    Volume,
    clamp_normalize,
    denormalize,
    make_bag_indices,
    preprocess_volume,
    resample_z,
    rescale_volume_xy,
    rescale_xy,
    stack_25d,
    stack_slice_masks,
)


def test_clamp_normalize_constants():
    v = Volume(np.array([-1000.0, -200.0, 50.0, 300.0, 2000.0]).reshape(1, 1, 5), (1, 1, 1))
    out = clamp_normalize(v).values.ravel()
    assert np.array_equal(out, [0.0, 0.0, 0.5, 1.0, 1.0]), f"window mapping {out}"
    assert clamp_normalize(v).intensity_space == "unit"


def test_clamp_window_must_be_ordered():
    v = Volume(np.zeros((1, 2, 2)), (1, 1, 1))
    with pytest.raises(ConfigurationError):
        clamp_normalize(v, 300, -200)


def test_denormalize_inverts_inside_window():
    rng = np.random.default_rng(0)
    hu = Volume(rng.uniform(-200, 300, size=(3, 4, 4)), (1, 1, 1))
    back = denormalize(clamp_normalize(hu))
    assert np.allclose(back.values, hu.values, atol=1e-9)


def test_resample_z_constant_volume_exact():
    v = Volume(np.full((7, 3, 3), 0.37), (2.5, 0.8, 0.8), "unit")
    out = resample_z(v, 1.5)
    assert out.Z == int(np.floor(6 * 2.5 / 1.5)) + 1
    assert np.all(out.values == 0.37), "constant volume changed under resampling"
    assert out.spacing == (1.5, 0.8, 0.8)


def test_resample_z_linear_ramp():
    dz = 2.0
    z = np.arange(9) * dz
    v = Volume(np.broadcast_to((3.0 + 0.25 * z)[:, None, None], (9, 2, 2)), (dz, 1, 1))
    out = resample_z(v, 1.5)
    expected = 3.0 + 0.25 * (np.arange(out.Z) * 1.5)
    assert np.max(np.abs(out.values[:, 0, 0] - expected)) <= 1e-10


def test_resample_z_same_spacing_is_copy():
    v = Volume(np.random.default_rng(1).uniform(size=(4, 3, 3)), (1.5, 1, 1), "unit")
    out = resample_z(v, 1.5)
    assert out == v and out.values is not v.values


def test_resample_single_slice():
    with pytest.raises(ContractError):
        resample_z(Volume(np.zeros((1, 2, 2)), (1, 1, 1)), 1.5)


def test_rescale_identity_and_corners():
    rng = np.random.default_rng(2)
    square = rng.uniform(size=(7, 7))
    assert np.array_equal(rescale_xy(square, 7), square)
    s = rng.uniform(size=(5, 7))
    up = rescale_xy(s, 13)
    assert up.shape == (13, 13)
    assert up[0, 0] == s[0, 0], "first corner not aligned"
    assert abs(up[-1, -1] - s[-1, -1]) <= 1e-12, "last corner not aligned"


def test_rescale_volume_updates_spacing():
    v = Volume(np.zeros((2, 9, 9)), (1.5, 1.0, 1.0), "unit")
    out = rescale_volume_xy(v, 5)
    assert out.dims == (2, 5, 5)
    assert out.spacing == (1.5, 2.0, 2.0)


def test_stack_25d_replicates_boundary():
    v = Volume(np.arange(4, dtype=float)[:, None, None] * np.ones((4, 2, 2)), (1, 1, 1))
    assert stack_25d(v, 0).channels.data[:, 0, 0].tolist() == [0.0, 0.0, 1.0]
    assert stack_25d(v, 3).channels.data[:, 0, 0].tolist() == [2.0, 3.0, 3.0]
    with pytest.raises(ContractError):
        stack_25d(v, 4)


def test_stack_25d_reconstructs_volume():
    rng = np.random.default_rng(3)
    v = Volume(rng.uniform(size=(6, 4, 5)), (1.5, 1, 1), "unit")
    centres = [stack_25d(v, z).channels.data[1] for z in range(v.Z)]
    assert np.array_equal(stack_slice_masks(centres), v.values)


def test_bag_spec_offsets_and_indices():
    spec = BagSpec.from_size(9)
    assert spec.offsets == [-4, -3, -2, -1, 0, 1, 2, 3, 4]
    assert make_bag_indices(1, spec, 10) == [0, 0, 0, 0, 1, 2, 3, 4, 5]
    assert make_bag_indices(9, BagSpec.from_size(3), 10) == [8, 9, 9]
    with pytest.raises(ConfigurationError):
        BagSpec.from_size(4)


def test_preprocess_is_idempotent_on_unit_volume():
    v = Volume(np.random.default_rng(4).uniform(size=(5, 8, 8)), (1.5, 1, 1), "unit")
    assert preprocess_volume(v, size=None) == v
    assert preprocess_volume(v, size=8) == v


def test_preprocess_pipeline():
    hu = Volume(np.full((5, 10, 10), 50.0), (3.0, 0.7, 0.7))
    out = preprocess_volume(hu, size=6)
    assert out.intensity_space == "unit"
    assert out.dims == (9, 6, 6)
    assert np.all(out.values == 0.5)


if __name__ == "__main__":
    test_clamp_normalize_constants()
