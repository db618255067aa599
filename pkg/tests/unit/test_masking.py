import numpy as np
import pydantic
import pytest
from masking import masking
from masking.masking import MaskConfig, MaskingException, MaskPlan, MaskStrategy


@pytest.fixture(name="rng")
def fixture_rng():
    return np.random.default_rng(7)


def test_temporal_mask_keeps_floor_of_unmasked_frames(rng):
    masked = masking.sample_temporal_mask(243, 0.8, rng)
    assert len(masked) == 195
    assert 243 - len(masked) == 48
    assert list(masked) == sorted(set(masked))
    assert all(0 <= i < 243 for i in masked)


def test_temporal_mask_ratio_09(rng):
    masked = masking.sample_temporal_mask(243, 0.9, rng)
    assert 243 - len(masked) == 24


def test_temporal_mask_zero_ratio_masks_nothing(rng):
    assert masking.sample_temporal_mask(27, 0.0, rng) == ()


@pytest.mark.parametrize("q_t", [1.0, 1.5, -0.1])
def test_temporal_mask_rejects_invalid_ratio(rng, q_t):
    with pytest.raises(MaskingException):
        masking.sample_temporal_mask(243, q_t, rng)


def test_temporal_mask_rejects_ratio_leaving_no_frame(rng):
    with pytest.raises(MaskingException):
        masking.sample_temporal_mask(3, 0.9, rng)


def test_num_unmasked_frames_is_floored():
    assert masking.num_unmasked_frames(243, 0.8) == 48
    assert masking.num_unmasked_frames(10, 0.8) == 2
    assert masking.num_unmasked_frames(27, 0.0) == 27


def test_spatial_masks_sizes(rng):
    masks = masking.sample_spatial_masks(5, 17, 7, rng)
    assert len(masks) == 5
    for mask in masks:
        assert len(mask) == 7
        assert len(set(mask)) == 7
        assert all(0 <= j < 17 for j in mask)


def test_spatial_masks_edge_counts(rng):
    assert masking.sample_spatial_masks(4, 17, 0, rng) == ((),) * 4
    full = masking.sample_spatial_masks(3, 17, 17, rng)
    assert all(mask == tuple(range(17)) for mask in full)


def test_spatial_masks_reject_too_many_joints(rng):
    with pytest.raises(MaskingException):
        masking.sample_spatial_masks(4, 17, 18, rng)


def test_spatial_ratio_of_seven_joints():
    config = MaskConfig(q_t=0.0, m_s=7, strategy=MaskStrategy.SPATIAL)
    assert config.q_s(17) == pytest.approx(0.4118, abs=1e-4)


def test_combined_ratio():
    assert masking.combined_ratio(0.8, 2 / 17) == pytest.approx(0.8235, abs=1e-4)
    assert masking.combined_ratio(0.9, 7 / 17) == pytest.approx(0.9412, abs=1e-4)
    assert masking.combined_ratio(0.6, 0.0) == pytest.approx(0.6)
    assert MaskConfig().combined_ratio(17) == pytest.approx(0.8235, abs=1e-4)


def test_build_plan_cardinalities(rng):
    config = MaskConfig(q_t=0.8, m_s=1)
    plan = masking.build_plan(config, 10, 3, rng)
    assert plan.num_unmasked == 2
    assert plan.num_masked == 8
    assert all(len(mask) == 1 for mask in plan.spatial_masks)
    assert set(plan.masked_frames).isdisjoint(plan.unmasked_order)


def test_build_plan_temporal_strategy_has_no_spatial_masks(rng):
    config = MaskConfig(q_t=0.5, m_s=0, strategy=MaskStrategy.TEMPORAL)
    plan = masking.build_plan(config, 27, 17, rng)
    assert plan.num_unmasked == 13
    assert all(mask == () for mask in plan.spatial_masks)


def test_build_plan_spatial_strategy_keeps_every_frame(rng):
    config = MaskConfig(q_t=0.0, m_s=3, strategy=MaskStrategy.SPATIAL)
    plan = masking.build_plan(config, 9, 17, rng)
    assert plan.masked_frames == ()
    assert plan.unmasked_order == tuple(range(9))
    assert len(plan.spatial_masks) == 9


def test_build_plan_is_reproducible():
    config = MaskConfig()
    first = masking.build_plan(config, 243, 17, np.random.default_rng(3))
    second = masking.build_plan(config, 243, 17, np.random.default_rng(3))
    assert first == second


def test_build_plan_rejects_too_many_joints(rng):
    with pytest.raises(MaskingException):
        masking.build_plan(MaskConfig(q_t=0.5, m_s=4), 9, 3, rng)


def test_mask_config_rejects_inconsistent_strategy():
    with pytest.raises(pydantic.ValidationError):
        MaskConfig(q_t=0.8, m_s=2, strategy=MaskStrategy.TEMPORAL)
    with pytest.raises(pydantic.ValidationError):
        MaskConfig(q_t=0.8, m_s=2, strategy=MaskStrategy.SPATIAL)


def test_mask_plan_rejects_broken_partition():
    with pytest.raises(pydantic.ValidationError):
        MaskPlan(masked_frames=(0, 1), unmasked_order=(1, 2), spatial_masks=((), ()))
    with pytest.raises(pydantic.ValidationError):
        MaskPlan(masked_frames=(0,), unmasked_order=(2, 1), spatial_masks=((), ()))
    with pytest.raises(pydantic.ValidationError):
        MaskPlan(masked_frames=(0,), unmasked_order=(1, 2), spatial_masks=((),))


def test_spatial_mask_matrix(rng):
    plan = MaskPlan(
        masked_frames=(1,), unmasked_order=(0, 2), spatial_masks=((3,), (0,))
    )
    matrix = plan.spatial_mask_matrix(5)
    assert matrix.shape == (3, 5)
    assert matrix.sum() == 2
    assert matrix[0, 3] and matrix[2, 0]
    assert not matrix[1].any()


def test_mask_plan_json_round_trip(rng):
    plan = masking.build_plan(MaskConfig(), 27, 17, rng)
    assert MaskPlan.from_json(plan.to_json(), 27) == plan


def test_empty_plan():
    plan = MaskPlan.empty(5)
    assert plan.is_empty
    assert plan.num_unmasked == 5
    assert masking.masked_fraction(plan, 17) == 0.0


def test_masked_fraction(rng):
    plan = masking.build_plan(MaskConfig(q_t=0.8, m_s=1), 10, 3, rng)
    # 8 masked frames of 3 joints plus 1 joint in each of the 2 survivors
    assert masking.masked_fraction(plan, 3) == pytest.approx(26 / 30)


@pytest.mark.parametrize("q_t, m_s", [(0.8, 2), (0.5, 4), (0.0, 2), (0.9, 0)])
def test_masked_fraction_matches_combined_ratio(rng, q_t, m_s):
    config = MaskConfig(q_t=q_t, m_s=m_s)
    fractions = [
        masking.masked_fraction(masking.build_plan(config, 243, 17, rng), 17)
        for _ in range(1000)
    ]
    assert np.mean(fractions) == pytest.approx(config.combined_ratio(17), rel=0.01)
