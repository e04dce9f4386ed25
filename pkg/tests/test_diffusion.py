import math

import pytest
import torch

from bridgediff.diffusion import (
    SampleConfig,
    cfg_combine,
    ddim_step,
    ddpm_loss,
    forward_noise,
    inference_timesteps,
    make_linear_schedule,
    sample,
)
from bridgediff.errors import ConfigError, ContractViolation

from conftest import custom_schedule

# brute-force running product over 1000 terms, frozen as the regression oracle
ALPHA_BAR_1000 = 4.035829765375675382e-05


class TestLinearSchedule:
    def test_single_step_product(self):
        sched = make_linear_schedule(1, 0.5, 0.5)
        assert torch.allclose(sched.alpha_bars, torch.tensor([0.5], dtype=torch.float64))

    def test_zero_noise_degenerate(self):
        sched = make_linear_schedule(3, 0.0, 0.0)
        assert sched.alpha_bars.tolist() == [1.0, 1.0, 1.0]

    def test_default_schedule_brute_force_product(self):
        sched = make_linear_schedule(1000, 1e-4, 0.02)
        total = 1.0
        for i in range(1000):
            total *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 999)
        assert abs(float(sched.alpha_bars[-1]) - total) / total < 1e-12
        assert abs(total - ALPHA_BAR_1000) / ALPHA_BAR_1000 < 1e-12

    @pytest.mark.parametrize("args", [(0, 0.1, 0.2), (10, -0.1, 0.2),
                                      (10, 0.3, 0.2), (10, 0.1, 1.0)])
    def test_invalid_ranges_rejected(self, args):
        with pytest.raises(ConfigError):
            make_linear_schedule(*args)

    @pytest.mark.parametrize("seed", range(5))
    def test_invariants_randomized(self, seed):
        gen = torch.Generator().manual_seed(seed)
        t_steps = int(torch.randint(2, 500, (1,), generator=gen))
        start = float(torch.rand(1, generator=gen)) * 0.01 + 1e-5
        end = start + float(torch.rand(1, generator=gen)) * 0.5
        sched = make_linear_schedule(t_steps, start, end)
        assert (sched.betas > 0).all() and (sched.betas < 1).all()
        diffs = sched.alpha_bars[1:] - sched.alpha_bars[:-1]
        assert (diffs < 0).all()  # strictly decreasing when all betas > 0
        running = torch.cumprod(1.0 - sched.betas, dim=0)
        rel = ((sched.alpha_bars - running).abs() / running).max()
        assert rel < 1e-12


class TestForwardNoise:
    def test_alpha_bar_one_returns_x0(self):
        sched = custom_schedule([1.0])
        x0, eps = torch.randn(2, 3), torch.randn(2, 3)
        assert torch.equal(forward_noise(x0, 1, eps, sched), x0)

    def test_alpha_bar_zero_returns_eps(self):
        sched = custom_schedule([0.0])
        x0, eps = torch.randn(2, 3), torch.randn(2, 3)
        assert torch.equal(forward_noise(x0, 1, eps, sched), eps)

    def test_scalar_case(self):
        sched = custom_schedule([0.25])
        out = forward_noise(torch.tensor([1.0]), 1, torch.tensor([1.0]), sched)
        assert abs(float(out) - (0.5 + math.sqrt(0.75))) < 1e-6

    def test_shape_mismatch_rejected(self, default_schedule):
        with pytest.raises(ContractViolation):
            forward_noise(torch.zeros(2, 3), 10, torch.zeros(3, 2), default_schedule)

    def test_marginal_statistics(self, default_schedule):
        n = 10_000
        t = 400
        ab = default_schedule.alpha_bar(t)
        x0 = torch.full((n,), 0.7, dtype=torch.float64)
        gen = torch.Generator().manual_seed(0)
        eps = torch.randn(n, generator=gen, dtype=torch.float64)
        xt = forward_noise(x0, t, eps, default_schedule)
        mean_se = math.sqrt((1 - ab) / n)
        assert abs(float(xt.mean()) - math.sqrt(ab) * 0.7) < 3 * mean_se
        var_se = math.sqrt(2.0 / (n - 1)) * (1 - ab)
        assert abs(float(xt.var(unbiased=True)) - (1 - ab)) < 3 * var_se


class TestDdpmLoss:
    def test_zero_when_equal(self):
        x = torch.randn(4, 4)
        assert float(ddpm_loss(x, x)) == 0.0

    def test_unit_offset(self):
        x = torch.randn(4, 4)
        assert abs(float(ddpm_loss(x + 1.0, x)) - 1.0) < 1e-6

    def test_hand_arithmetic(self):
        loss = ddpm_loss(torch.tensor([0.0, 2.0]), torch.tensor([1.0, 0.0]))
        assert abs(float(loss) - 2.5) < 1e-7

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            ddpm_loss(torch.zeros(2), torch.zeros(3))

    def test_differentiable_wrt_prediction(self):
        pred = torch.randn(3, 3, requires_grad=True)
        ddpm_loss(pred, torch.zeros(3, 3)).backward()
        assert pred.grad is not None and torch.isfinite(pred.grad).all()


class TestDdimStep:
    def test_inversion_identity(self):
        sched = make_linear_schedule(10, 1e-4, 0.4)
        x0 = torch.randn(1, 3, 8, 8, dtype=torch.float64)
        eps = torch.randn_like(x0)
        x_t = forward_noise(x0, 10, eps, sched)
        rec = ddim_step(x_t, eps, 10, 0, sched, eta=0.0)
        assert ((rec - x0).abs().max() / x0.abs().max()) < 1e-6

    def test_fixed_point_when_alpha_bar_equal(self):
        sched = custom_schedule([0.5, 0.5])
        x_t = torch.randn(4)
        out = ddim_step(x_t, torch.randn(4), 2, 1, sched, eta=0.0)
        assert torch.allclose(out, x_t, atol=1e-12)

    def test_scalar_arithmetic(self):
        sched = custom_schedule([0.81, 0.25])
        out = ddim_step(torch.tensor([1.0]), torch.tensor([0.5]), 2, 1, sched)
        x0_hat = (1.0 - math.sqrt(0.75) * 0.5) / 0.5
        expected = 0.9 * x0_hat + math.sqrt(0.19) * 0.5
        assert abs(float(out) - expected) < 1e-6
        assert abs(expected - 1.23852) < 5e-6

    def test_order_violation_rejected(self, default_schedule):
        with pytest.raises(ContractViolation):
            ddim_step(torch.zeros(2), torch.zeros(2), 5, 5, default_schedule)

    def test_pure_function_for_eta_zero(self, default_schedule):
        x_t, eps = torch.randn(3), torch.randn(3)
        a = ddim_step(x_t, eps, 800, 780, default_schedule, eta=0.0)
        b = ddim_step(x_t, eps, 800, 780, default_schedule, eta=0.0)
        assert torch.equal(a, b)


class TestCfgCombine:
    def test_endpoints(self):
        u, c = torch.randn(5), torch.randn(5)
        assert torch.equal(cfg_combine(u, c, 1.0), c)
        assert torch.equal(cfg_combine(u, c, 0.0), u)

    def test_scalar_case(self):
        out = cfg_combine(torch.tensor([0.2]), torch.tensor([0.4]), 7.5)
        assert abs(float(out) - 1.7) < 1e-6

    def test_affine_in_scale(self):
        gen = torch.Generator().manual_seed(4)
        u = torch.randn(16, generator=gen, dtype=torch.float64)
        c = torch.randn(16, generator=gen, dtype=torch.float64)
        for a, b in [(0.5, 2.0), (7.5, -1.0), (3.0, 3.0)]:
            lhs = cfg_combine(u, c, a) + cfg_combine(u, c, b) - cfg_combine(u, c, 0.0)
            rhs = cfg_combine(u, c, a + b)
            assert (lhs - rhs).abs().max() < 1e-10

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            cfg_combine(torch.zeros(2), torch.zeros(3), 1.0)


class _PlantedDenoiser:
    """Returns the epsilon consistent with a planted forward trajectory."""

    def __init__(self, eps):
        self.eps = eps

    def predict_eps(self, x_t, t, enc):
        return self.eps


class TestSample:
    def test_timestep_subsequence(self):
        ts = inference_timesteps(1000, 50)
        assert len(ts) == 50 and ts[0] == 1000 and ts[-1] == 20
        assert all(a > b for a, b in zip(ts, ts[1:]))
        with pytest.raises(ConfigError):
            inference_timesteps(1000, 33)

    def test_planted_trajectory_recovers_x0(self, default_schedule):
        cfg = SampleConfig(num_inference_steps=50, cfg_scale=7.5, seed=11, resolution=8)
        gen = torch.Generator().manual_seed(cfg.seed)
        x_T = torch.randn(1, 3, 8, 8, generator=gen)
        x0 = torch.rand(1, 3, 8, 8) * 1.6 - 0.8
        ab = default_schedule.alpha_bar(1000)
        eps = (x_T - math.sqrt(ab) * x0) / math.sqrt(1 - ab)
        out = sample(_PlantedDenoiser(eps), None, None, cfg, default_schedule)
        assert (out - x0).abs().max() < 1e-4

    def test_fixed_seed_determinism(self, default_schedule):
        eps = torch.randn(1, 3, 8, 8)
        cfg = SampleConfig(num_inference_steps=10, seed=3, resolution=8)
        a = sample(_PlantedDenoiser(eps), None, None, cfg, default_schedule)
        b = sample(_PlantedDenoiser(eps), None, None, cfg, default_schedule)
        assert torch.equal(a, b)

    def test_cfg_collapse_when_branches_equal(self, default_schedule, tiny_bridged):
        model = tiny_bridged.eval()
        enc = model.null_encoding()
        outs = []
        for s in (1.0, 0.0):
            cfg = SampleConfig(num_inference_steps=10, cfg_scale=s, seed=5, resolution=8)
            outs.append(sample(model, enc, enc, cfg, default_schedule))
        assert torch.equal(outs[0], outs[1])
