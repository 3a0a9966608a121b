import numpy as np
import pytest

from repaint3d.diffusion import (
    ContractiveDenoiser,
    DiffusionError,
    NoiseSchedule,
    OracleDenoiser,
    downsample_mask,
    forward_diffuse,
    masked_generate,
)
from repaint3d.remap import GENERATE, KEEP, REFINE


def test_schedule_endpoints_and_variance():
    sched = NoiseSchedule.linear(50)
    assert sched.n_steps == 50
    assert sched.signal[0] == 1.0 and sched.noise[0] == 0.0
    assert sched.signal[50] == 0.0 and sched.noise[50] == 1.0
    assert np.abs(sched.signal**2 + sched.noise**2 - 1.0).max() <= 1e-12


def test_forward_diffuse_endpoints():
    rng = np.random.default_rng(0)
    x0 = rng.uniform(size=(8, 8, 3))
    sched = NoiseSchedule.linear(50)
    assert np.array_equal(forward_diffuse(x0, 0, sched, seed=7), x0)
    # at t = T the output ignores x0 entirely
    a = forward_diffuse(x0, 50, sched, seed=7)
    b = forward_diffuse(np.zeros_like(x0), 50, sched, seed=7)
    assert np.array_equal(a, b)
    with pytest.raises(DiffusionError):
        forward_diffuse(x0, 51, sched, seed=7)


def test_forward_diffuse_deterministic_per_step():
    x0 = np.ones((4, 4))
    sched = NoiseSchedule.linear(10)
    a = forward_diffuse(x0, 3, sched, seed=1)
    b = forward_diffuse(x0, 3, sched, seed=1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, forward_diffuse(x0, 3, sched, seed=2))
    assert not np.array_equal(a, forward_diffuse(x0, 4, sched, seed=1))


def test_downsample_mask_values():
    # 2x2 cells over a 4x4 zone map, mean of keep=1 refine=0.5 generate=0
    zones = np.array([
        [KEEP, KEEP, REFINE, GENERATE],
        [KEEP, KEEP, REFINE, REFINE],
        [GENERATE, GENERATE, KEEP, KEEP],
        [GENERATE, KEEP, KEEP, KEEP],
    ], dtype=np.uint8)
    mask = (zones == GENERATE).astype(np.uint8)
    w = downsample_mask(mask, zones, factor=2)
    expected = np.array([[1.0, (0.5 + 0.0 + 0.5 + 0.5) / 4],
                         [0.25, 1.0]])
    assert np.array_equal(w, expected)
    # without zones: mean of (1 - mask)
    w2 = downsample_mask(mask, factor=2)
    assert np.array_equal(w2, np.array([[1.0, 0.75], [0.25, 1.0]]))


def test_downsample_mask_identity_and_all_keep():
    mask = np.zeros((6, 6), dtype=np.uint8)
    assert np.array_equal(downsample_mask(mask), np.ones((6, 6)))
    assert np.array_equal(downsample_mask(mask, factor=3), np.ones((2, 2)))
    with pytest.raises(DiffusionError):
        downsample_mask(mask, factor=4)  # does not divide 6


def test_masked_generate_keep_is_exact():
    rng = np.random.default_rng(3)
    constraint = rng.uniform(size=(8, 8, 3))
    target = rng.uniform(size=(8, 8, 3))
    sched = NoiseSchedule.linear(50)
    out = masked_generate(OracleDenoiser(target, sched), constraint,
                          np.ones((8, 8)), schedule=sched, seed=11)
    assert np.array_equal(out, constraint)


def test_masked_generate_oracle_blend():
    # oracle denoiser at t=0 returns the target, so the final blend is
    # (1 - M) target + M constraint cell by cell
    rng = np.random.default_rng(4)
    constraint = rng.uniform(size=(6, 6, 3))
    target = rng.uniform(size=(6, 6, 3))
    mask = rng.uniform(size=(6, 6))
    sched = NoiseSchedule.linear(50)
    out = masked_generate(OracleDenoiser(target, sched), constraint, mask,
                          schedule=sched, seed=5)
    expected = (1.0 - mask[..., None]) * target + mask[..., None] * constraint
    assert np.abs(out - expected).max() <= 1e-12


def test_masked_generate_free_runs_unconstrained():
    # with M = 0 the output must equal the denoiser's own trajectory
    rng = np.random.default_rng(5)
    constraint = rng.uniform(size=(5, 5))
    target = rng.uniform(size=(5, 5))
    sched = NoiseSchedule.linear(20)
    seed = 9
    out = masked_generate(ContractiveDenoiser(target), constraint,
                          np.zeros((5, 5)), schedule=sched, seed=seed)
    y = forward_diffuse(np.zeros((5, 5)), 20, sched, seed)
    for t in range(19, -1, -1):
        y = 0.5 * y + 0.5 * target
    assert np.abs(out - y).max() <= 1e-12


def test_contractive_half_mask_matches_reference():
    # independent simulation of the blending recurrence, compared end to end
    rng = np.random.default_rng(6)
    constraint = rng.uniform(size=(8, 8, 3))
    target = rng.uniform(size=(8, 8, 3))
    mask = np.zeros((8, 8))
    mask[:, :4] = 1.0  # left half constrained, right half free
    sched = NoiseSchedule.linear(50)
    seed = 21
    out = masked_generate(ContractiveDenoiser(target), constraint, mask,
                          schedule=sched, seed=seed)

    m = mask[:, :, None]
    y = (np.sqrt(1.0 - 50 / 50) * constraint
         + np.sqrt(50 / 50) * np.random.default_rng([seed, 50]).standard_normal(constraint.shape))
    for t in range(49, -1, -1):
        denoised = 0.5 * y + 0.5 * target
        eps = np.random.default_rng([seed, t]).standard_normal(constraint.shape)
        x_t = np.sqrt(1.0 - t / 50) * constraint + np.sqrt(t / 50) * eps
        y = (1.0 - m) * denoised + m * x_t
    assert np.abs(out - y).max() <= 1e-6

    # constrained half exact, free half converged to the target
    assert np.array_equal(out[:, :4], constraint[:, :4])
    assert np.abs(out[:, 4:] - target[:, 4:]).max() <= 1e-6


def test_masked_cells_ignore_conditioning():
    # cells with weight 1 cannot depend on the denoiser target
    rng = np.random.default_rng(7)
    constraint = rng.uniform(size=(6, 6))
    mask = (rng.uniform(size=(6, 6)) > 0.5).astype(float)
    sched = NoiseSchedule.linear(30)
    out_a = masked_generate(ContractiveDenoiser(np.zeros((6, 6))), constraint,
                            mask, schedule=sched, seed=2)
    out_b = masked_generate(ContractiveDenoiser(np.ones((6, 6))), constraint,
                            mask, schedule=sched, seed=2)
    kept = mask == 1.0
    assert np.array_equal(out_a[kept], out_b[kept])
    assert not np.array_equal(out_a[~kept], out_b[~kept])


def test_masked_generate_validation_and_failure():
    sched = NoiseSchedule.linear(5)
    constraint = np.zeros((4, 4))
    with pytest.raises(DiffusionError):
        masked_generate(ContractiveDenoiser(constraint), constraint,
                        np.full((4, 4), 2.0), schedule=sched)
    with pytest.raises(DiffusionError):
        masked_generate(ContractiveDenoiser(constraint), constraint,
                        np.zeros((3, 3)), schedule=sched)

    class Broken(ContractiveDenoiser):
        def step(self, latent, t, conditioning):
            raise ValueError("boom")

    with pytest.raises(DiffusionError, match="step 4"):
        masked_generate(Broken(constraint), constraint, np.zeros((4, 4)),
                        schedule=sched)
