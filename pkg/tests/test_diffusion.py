import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lightforge.diffusion import (
    Batch,
    ControlBranch,
    ControlledDenoiser,
    EDMSchedule,
    ToyDenoiser,
    ToyRelighter,
    add_noise,
    batch_loss,
    denoise_step,
    init_state,
    precondition,
    sample,
    training_step,
)
from lightforge.diffusion.edm import loss_weighted


def decimal_precondition(sigma: float):
    """High-precision reference for the three coefficients."""
    getcontext().prec = 50
    s = Decimal(sigma)
    one = Decimal(1)
    return float(one / (one + s * s)), float(s / (one + s * s).sqrt()), float((one + s * s) / (s * s))


def random_inputs(b=2, n=4, h=8, w=8, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(b, n, h, w, 3, generator=g, dtype=dtype)
    cond = torch.rand(b, h, w, 3, generator=g, dtype=dtype) * 2 - 1
    control = torch.rand(b, n, h, w, 5, generator=g, dtype=dtype)
    sigma = torch.exp(torch.randn(b, generator=g, dtype=dtype))
    return x, sigma, cond, control


class TestPrecondition:
    def test_sigma_one(self):
        c_skip, c_out, w = precondition(1.0)
        assert c_skip == 0.5 and w == 2.0
        assert c_out == pytest.approx(0.70711, abs=5e-6)

    def test_small_sigma_limit(self):
        c_skip, c_out, _ = precondition(1e-9)
        assert c_skip == pytest.approx(1.0, abs=1e-15) and c_out == pytest.approx(0.0, abs=1e-8)

    def test_against_decimal_oracle(self):
        for s in np.random.default_rng(0).uniform(1e-3, 100, 100):
            got = precondition(float(s))
            for a, b in zip(got, decimal_precondition(float(s))):
                assert a == pytest.approx(b, rel=1e-14)

    @given(st.floats(1e-6, 1e6))
    def test_weight_identity(self, s):
        _, c_out, w = precondition(s)
        assert w * c_out**2 == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.array([1.0, 0.0]), torch.tensor([-0.5])])
    def test_rejects_non_positive(self, bad):
        with pytest.raises(ValueError):
            precondition(bad)

    def test_tensor_and_array(self):
        s = np.array([0.5, 2.0])
        np.testing.assert_allclose(precondition(torch.tensor(s))[0].numpy(), precondition(s)[0])


class TestAddNoise:
    def test_variance(self):
        sigma, n = 0.7, 1_000_000
        clean = np.full(n, 0.3)
        diff = add_noise(clean, sigma, seed=1) - clean
        se = sigma**2 * math.sqrt(2 / (n - 1))
        assert abs(diff.var(ddof=1) - sigma**2) < 3 * se

    def test_seeded(self):
        clean = np.zeros((4, 5))
        assert np.array_equal(add_noise(clean, 1.0, seed=3), add_noise(clean, 1.0, seed=3))
        assert not np.array_equal(add_noise(clean, 1.0, seed=3), add_noise(clean, 1.0, seed=4))
        t = torch.zeros(3, 4)
        assert torch.equal(add_noise(t, 2.0, seed=5), add_noise(t, 2.0, seed=5))

    def test_per_item_sigma(self):
        clean = torch.zeros(2, 10000, dtype=torch.float64)
        out = add_noise(clean, torch.tensor([0.1, 10.0], dtype=torch.float64), seed=0)
        assert out[0].std() == pytest.approx(0.1, rel=0.05) and out[1].std() == pytest.approx(10.0, rel=0.05)

    def test_zero_sigma_rejected(self):
        with pytest.raises(ValueError):
            add_noise(np.zeros(3), 0.0, seed=0)


class TestSchedule:
    def test_karras_endpoints(self):
        sched = EDMSchedule.karras(10)
        assert sched.sigmas[0] == pytest.approx(80.0) and sched.sigmas[-1] == pytest.approx(0.02)
        assert len(sched) == 10

    @pytest.mark.parametrize("bad", [(), (1.0, 2.0), (1.0, 1.0), (1.0, 0.0), (float("nan"),)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            EDMSchedule(bad)


class TestNetworks:
    def test_shape_preserved(self):
        model = ControlledDenoiser(8)
        x, sigma, cond, control = random_inputs(dtype=torch.float32)
        assert model(x, sigma, cond, control).shape == x.shape
        assert denoise_step(x[0], sigma[0], cond[0], control[0], model).shape == x[0].shape

    def test_odd_size_rejected(self):
        x, sigma, cond, _ = random_inputs(h=7, w=8, dtype=torch.float32)
        with pytest.raises(ValueError, match="even"):
            ToyDenoiser(8)(x, sigma, cond)

    def test_shape_mismatch_rejected(self):
        model = ControlledDenoiser(8).double()
        x, sigma, cond, control = random_inputs()
        with pytest.raises(ValueError, match="control shape"):
            denoise_step(x, sigma, cond, control[:, :3], model)
        with pytest.raises(ValueError, match="cond shape"):
            denoise_step(x, sigma, cond[:1], control, model)

    def test_projections_start_at_zero(self):
        branch = ControlBranch(8)
        _, _, _, control = random_inputs(dtype=torch.float32)
        assert all(torch.count_nonzero(r) == 0 for r in branch(control))

    def test_branch_copies_encoder(self):
        model = ControlledDenoiser(8)
        assert torch.equal(model.branch.mid.weight, model.base.mid.weight)
        assert torch.equal(model.branch.down.weight, model.base.down.weight)
        assert model.branch.mid.weight.data_ptr() != model.base.mid.weight.data_ptr()

    def test_temporal_layer_mixes_frames(self):
        model = ToyDenoiser(8).double()
        x, sigma, cond, _ = random_inputs()
        y = x.clone()
        y[:, 2] += 1.0
        diff = (model(x, sigma, cond) - model(y, sigma, cond)).abs().amax(dim=(2, 3, 4))
        assert torch.all(diff[:, 0] > 0)  # frame 0 sees the change to frame 2


class TestDenoiseStep:
    def test_zero_init_equivalence(self):
        model = ControlledDenoiser(8)
        for seed in range(50):
            x, sigma, cond, control = random_inputs(1, 3, 8, 8, seed, torch.float32)
            with_control = denoise_step(x, sigma, cond, control, model)
            zeroed = denoise_step(x, sigma, cond, torch.zeros_like(control), model)
            assert torch.equal(with_control, zeroed)
            assert torch.equal(with_control, denoise_step(x, sigma, cond, None, model))

    def test_zero_stub(self):
        x, sigma, cond, control = random_inputs()
        out = denoise_step(x, sigma, cond, control, lambda x, s, c, l: torch.zeros_like(x))
        c_skip, _, _ = precondition(sigma)
        assert torch.equal(out, c_skip.reshape(-1, 1, 1, 1, 1) * x)

    def test_scalar_sigma(self):
        x, _, cond, control = random_inputs()
        out = denoise_step(x, 2.0, cond, control, lambda x, s, c, l: torch.ones_like(x))
        torch.testing.assert_close(out, x / 5 + 2 / math.sqrt(5), rtol=1e-15, atol=1e-15)


def oracle_model(clean):
    """Returns exactly the F for which D(x) equals ``clean``."""
    def f(x, sigma, cond, control):
        c_skip, c_out, _ = precondition(sigma)
        shape = (-1, 1, 1, 1, 1)
        return (clean - c_skip.reshape(shape) * x) / c_out.reshape(shape)
    return f


class TestTraining:
    def test_oracle_loss_zero(self):
        clean, sigma, cond, control = random_inputs()
        batch = Batch(clean, control, cond)
        loss = batch_loss(oracle_model(clean), batch, sigma, torch.Generator().manual_seed(0))
        assert float(loss) < 1e-25

    def test_loss_matches_direct_sum(self):
        d, sigma, _, _ = random_inputs(seed=1)
        clean = torch.randn_like(d)
        w = (1 + sigma**2) / sigma**2
        expected = sum(float(w[i]) * float(((d[i] - clean[i]) ** 2).sum()) for i in range(len(d))) / d.numel()
        assert float(loss_weighted(d, clean, sigma)) == pytest.approx(expected, rel=1e-12)

    def test_gradient_check(self):
        check_gradients(channels=6, per_family=20)

    def test_frozen_base(self):
        state = init_state(8, seed=0, frozen_base=True, learning_rate=1e-2)
        base_before = {k: v.clone() for k, v in state.model.base.state_dict().items()}
        branch_before = {k: v.clone() for k, v in state.model.branch.state_dict().items()}
        clean, _, cond, control = random_inputs(dtype=torch.float32)
        for _ in range(3):
            state, _ = training_step(state, Batch(clean, control, cond))
        for k, v in state.model.base.state_dict().items():
            assert torch.equal(v, base_before[k])
        assert any(not torch.equal(v, branch_before[k]) for k, v in state.model.branch.state_dict().items())

    def test_joint_updates_base(self):
        state = init_state(8, seed=0)
        before = state.model.base.enc1.weight.clone()
        clean, _, cond, control = random_inputs(dtype=torch.float32)
        state, loss = training_step(state, Batch(clean, control, cond))
        assert math.isfinite(loss) and state.step == 1
        assert not torch.equal(before, state.model.base.enc1.weight)

    def test_non_finite_loss_reports(self):
        state = init_state(8, seed=0)
        clean, _, cond, control = random_inputs(dtype=torch.float32)
        clean[0, 0, 0, 0, 0] = float("nan")
        with pytest.raises(FloatingPointError, match=r"sigma=.*batch ids=\[7, 9\]"):
            training_step(state, Batch(clean, control, cond, ids=[7, 9]))

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            Batch(torch.zeros(0, 2, 4, 4, 3), torch.zeros(0, 2, 4, 4, 5), torch.zeros(0, 4, 4, 3))

    def test_deterministic(self):
        clean, _, cond, control = random_inputs(dtype=torch.float32)
        runs = []
        for _ in range(2):
            state = init_state(8, seed=4)
            runs.append([training_step(state, Batch(clean, control, cond))[1] for _ in range(4)])
            runs[-1].append(state.model.base.out.weight.clone())
        assert runs[0][:4] == runs[1][:4]
        assert torch.equal(runs[0][4], runs[1][4])


def check_gradients(channels=6, per_family=20, seed=0, h=1e-4, tol=1e-3):
    """Central differences against autograd on sampled entries of every layer.

    The zero-initialised projections are randomised first; otherwise the
    branch layers behind them have identically zero gradient and the check
    would be vacuous for them.
    """
    torch.manual_seed(seed)
    model = ControlledDenoiser(channels, seed=seed).double()
    with torch.no_grad():
        for p in model.branch.proj.parameters():
            p.normal_(0, 0.3)
    clean, sigma, cond, control = random_inputs(1, 3, 8, 8, seed)
    noise_seed = 11

    def loss_fn():
        return batch_loss(model, Batch(clean, control, cond), sigma, torch.Generator().manual_seed(noise_seed))

    loss = loss_fn()
    model.zero_grad()
    loss.backward()
    rng = np.random.default_rng(seed)
    worst = {}
    families = model.parameter_families()
    for family, params in families.items():
        sizes = np.array([p.numel() for _, p in params])
        picks = rng.choice(sizes.sum(), size=min(per_family, sizes.sum()), replace=False)
        errors = []
        for flat in picks:
            k = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
            idx = int(flat - (np.cumsum(sizes)[k - 1] if k else 0))
            p = params[k][1]
            view = p.data.view(-1)
            analytic = float(p.grad.view(-1)[idx])
            orig = float(view[idx])
            with torch.no_grad():
                view[idx] = orig + h
                up = float(loss_fn())
                view[idx] = orig - h
                down = float(loss_fn())
                view[idx] = orig
            numeric = (up - down) / (2 * h)
            denom = max(abs(analytic), abs(numeric))
            errors.append(0.0 if denom == 0 else abs(analytic - numeric) / denom)
        worst[family] = max(errors)
        assert len(errors) >= min(per_family, sizes.sum())
    bad = {k: v for k, v in worst.items() if v > tol}
    assert not bad, f"gradient mismatch: {bad}"
    assert len(families) == 14
    return worst


class TestSampler:
    def test_single_step_oracle(self):
        clean, _, cond, control = random_inputs()
        out = sample(oracle_model(clean), cond, control, EDMSchedule((5.0,)), seed=0)
        torch.testing.assert_close(out, clean, rtol=0, atol=1e-12)

    def test_multi_step_oracle(self):
        clean, _, cond, control = random_inputs()
        out = sample(oracle_model(clean), cond, control, EDMSchedule.karras(6), seed=0)
        torch.testing.assert_close(out, clean, rtol=0, atol=1e-12)

    def test_shape_and_determinism(self):
        model = ControlledDenoiser(8).double()
        _, _, cond, control = random_inputs(1, 5, 8, 8)
        a = sample(model, cond[0], control[0], EDMSchedule.karras(3), seed=1)
        b = sample(model, cond[0], control[0], EDMSchedule.karras(3), seed=1)
        c = sample(model, cond[0], control[0], EDMSchedule.karras(3), seed=2)
        assert a.shape == (5, 8, 8, 3)
        assert torch.equal(a, b) and not torch.equal(a, c)

    def test_without_control(self):
        model = ControlledDenoiser(8).double()
        _, _, cond, _ = random_inputs(2, 5, 8, 8)
        assert sample(model, cond, None, EDMSchedule.karras(2), n_frames=4).shape == (2, 4, 8, 8, 3)


def tiny_data(m=6, n=4, size=8, seed=0):
    rng = np.random.default_rng(seed)
    clips = rng.uniform(-1, 1, (m, n, size, size, 3))
    controls = rng.uniform(0, 1, (m, n, size, size, 5))
    return clips, controls


class TestEstimator:
    def test_params_and_clone(self):
        est = ToyRelighter(channels=4, n_steps=3)
        assert est.get_params()["channels"] == 4
        assert clone(est).get_params() == est.get_params()
        est.set_params(learning_rate=0.5)
        assert est.learning_rate == 0.5

    def test_not_fitted(self):
        clips, controls = tiny_data()
        with pytest.raises(NotFittedError):
            ToyRelighter().predict(clips[:, 0], controls)

    def test_validation(self):
        clips, controls = tiny_data()
        with pytest.raises(ValueError, match="controls"):
            ToyRelighter(n_steps=1).fit(clips, controls[..., :4])
        clips[0, 0, 0, 0, 0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            ToyRelighter(n_steps=1).fit(clips, controls)

    def test_fit_predict_and_checkpoint(self, tmp_path):
        clips, controls = tiny_data()
        est = ToyRelighter(channels=4, n_steps=20, batch_size=2, learning_rate=1e-2, eval_every=5,
                           sample_steps=3).fit(clips, controls)
        assert len(est.loss_history_) == 20 and [s for s, _ in est.eval_history_] == [0, 5, 10, 15, 20]
        pred = est.predict(clips[:2, 0], controls[:2])
        assert pred.shape == clips[:2].shape and np.all(np.isfinite(pred))
        # the trained branch is no longer silent: different controls, different clips
        other = est.predict(clips[:2, 0], 1 - controls[:2])
        assert not np.array_equal(pred, other)
        est.save(tmp_path / "toy.ckpt")
        back = ToyRelighter.load(tmp_path / "toy.ckpt")
        assert back.get_params() == est.get_params()
        assert np.array_equal(back.predict(clips[:2, 0], controls[:2]), pred)
        assert back.eval_history_ == est.eval_history_

    def test_fit_deterministic(self):
        clips, controls = tiny_data()
        a = ToyRelighter(channels=4, n_steps=5, batch_size=2).fit(clips, controls)
        b = ToyRelighter(channels=4, n_steps=5, batch_size=2).fit(clips, controls)
        assert a.loss_history_ == b.loss_history_

    def test_frozen_base_estimator(self):
        clips, controls = tiny_data()
        est = ToyRelighter(channels=4, n_steps=4, batch_size=2, frozen_base=True, learning_rate=1e-2)
        est.fit(clips, controls)
        fresh = ControlledDenoiser(4, seed=0)
        for k, v in fresh.base.state_dict().items():
            assert torch.equal(v, est.model_.base.state_dict()[k])

    def test_bad_checkpoint(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"nope")
        with pytest.raises(ValueError, match="not a checkpoint"):
            ToyRelighter.load(p)
