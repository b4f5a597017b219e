"""Estimator wrapper: ``fit`` on rendered clips, ``predict`` relit clips from a first frame."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .edm import EDMSchedule, sample
from .model import CONTROL_CHANNELS, ControlledDenoiser
from .training import Batch, evaluation_loss, init_state, log_uniform_sampler, training_step

_TORCH_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def _check_clips(clips, controls, first_frames=None):
    clips = np.asarray(clips, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    if clips.ndim != 5 or clips.shape[-1] != 3:
        raise ValueError(f"clips must be (M, N, H, W, 3), got {clips.shape}")
    if controls.shape != clips.shape[:4] + (CONTROL_CHANNELS,):
        raise ValueError(f"controls must be {clips.shape[:4] + (CONTROL_CHANNELS,)}, got {controls.shape}")
    if first_frames is None:
        first_frames = clips[:, 0]
    first_frames = np.asarray(first_frames, dtype=np.float64)
    if first_frames.shape != clips.shape[:1] + clips.shape[2:]:
        raise ValueError(f"first frames must be {clips.shape[:1] + clips.shape[2:]}, got {first_frames.shape}")
    for name, arr in (("clips", clips), ("controls", controls), ("first frames", first_frames)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contain non-finite values")
    if len(clips) == 0:
        raise ValueError("need at least one clip")
    return clips, controls, first_frames


class ToyRelighter(BaseEstimator):
    """Control-conditioned video denoiser trained with the EDM weighted loss.

    Parameters
    ----------
    channels : width of the first convolution; deeper layers use twice this.
    n_steps : optimiser updates performed by ``fit``.
    batch_size : clips per update.
    learning_rate, momentum, optimizer : ``"sgd"`` (default) or ``"adamw"``.
    grad_clip : optional bound on the global gradient norm.
    sigma_min, sigma_max : range of the log-uniform training noise levels.
    frozen_base : train only the control branch.
    sample_steps : noise levels used by ``predict``.
    eval_size, eval_every : size of the fixed evaluation batch and how often
        its loss is recorded in ``eval_history_``.
    dtype : ``"float32"`` or ``"float64"``.
    random_state : seeds initialisation, batching and noise.
    """

    def __init__(self, channels=32, n_steps=2000, batch_size=8, learning_rate=1e-3, momentum=0.9,
                 optimizer="sgd", grad_clip=None, sigma_min=0.02, sigma_max=80.0, frozen_base=False,
                 sample_steps=12, eval_size=16, eval_every=100, dtype="float32", random_state=0):
        self.channels = channels
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.optimizer = optimizer
        self.grad_clip = grad_clip
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.frozen_base = frozen_base
        self.sample_steps = sample_steps
        self.eval_size = eval_size
        self.eval_every = eval_every
        self.dtype = dtype
        self.random_state = random_state

    def _torch_dtype(self):
        if self.dtype not in _TORCH_DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_TORCH_DTYPES)}")
        return _TORCH_DTYPES[self.dtype]

    def _eval_batch(self, clean, control, cond):
        k = min(self.eval_size, len(clean))
        sigma = torch.exp(torch.linspace(np.log(self.sigma_min), np.log(self.sigma_max), k, dtype=torch.float64))
        return Batch(clean[:k], control[:k], cond[:k], ids=range(k)), sigma

    def fit(self, clips, controls, first_frames=None, callback=None):
        """Train on clips (M, N, H, W, 3) with control volumes (M, N, H, W, 5).

        ``first_frames`` defaults to frame 1 of each clip. ``callback(step, loss)``
        is called after every update.
        """
        clips, controls, first_frames = _check_clips(clips, controls, first_frames)
        if self.n_steps < 0 or self.batch_size < 1:
            raise ValueError("n_steps must be >= 0 and batch_size >= 1")
        dtype = self._torch_dtype()
        seed = int(self.random_state)
        state = init_state(self.channels, seed, frozen_base=self.frozen_base, optimizer=self.optimizer,
                           learning_rate=self.learning_rate, momentum=self.momentum,
                           grad_clip=self.grad_clip, dtype=dtype)
        clean = torch.as_tensor(clips, dtype=dtype)
        control = torch.as_tensor(controls, dtype=dtype)
        cond = torch.as_tensor(first_frames, dtype=dtype)
        eval_batch, eval_sigma = self._eval_batch(clean, control, cond)
        sampler = log_uniform_sampler(self.sigma_min, self.sigma_max)
        order_gen = torch.Generator().manual_seed(seed + 1)

        self.loss_history_ = []
        self.eval_history_ = [(0, evaluation_loss(state.model, eval_batch, eval_sigma, seed))]
        order = torch.empty(0, dtype=torch.long)
        for step in range(1, self.n_steps + 1):
            if len(order) < self.batch_size:
                order = torch.cat([order, torch.randperm(len(clean), generator=order_gen)])
            ids, order = order[:self.batch_size], order[self.batch_size:]
            batch = Batch(clean[ids], control[ids], cond[ids], ids=ids.tolist())
            state, loss = training_step(state, batch, sampler)
            self.loss_history_.append(loss)
            if callback is not None:
                callback(step, loss)
            if step % self.eval_every == 0 or step == self.n_steps:
                self.eval_history_.append((step, evaluation_loss(state.model, eval_batch, eval_sigma, seed)))
        self.model_ = state.model.eval()
        self.state_ = state
        self.clip_shape_ = clips.shape[1:]
        return self

    @property
    def loss_reduction_(self) -> float:
        """Fractional drop of the evaluation-batch loss from step 0 to the last record."""
        check_is_fitted(self, "eval_history_")
        first, last = self.eval_history_[0][1], self.eval_history_[-1][1]
        return 1.0 - last / first

    def predict(self, first_frames, controls, seed=0, batch_size=16):
        """Sample clips (M, N, H, W, 3) from first frames (M, H, W, 3) and controls."""
        check_is_fitted(self, "model_")
        first_frames = np.asarray(first_frames, dtype=np.float64)
        controls = np.asarray(controls, dtype=np.float64)
        single = first_frames.ndim == 3
        if single:
            first_frames, controls = first_frames[None], controls[None]
        if controls.ndim != 5 or controls.shape[-1] != CONTROL_CHANNELS:
            raise ValueError(f"controls must be (M, N, H, W, 5), got {controls.shape}")
        if controls.shape[0] != first_frames.shape[0] or controls.shape[2:4] != first_frames.shape[1:3]:
            raise ValueError("first frames and controls disagree in count or size")
        dtype = self._torch_dtype()
        schedule = EDMSchedule.karras(self.sample_steps, self.sigma_min, self.sigma_max)
        out = []
        for start in range(0, len(first_frames), batch_size):
            ff = torch.as_tensor(first_frames[start:start + batch_size], dtype=dtype)
            ctl = torch.as_tensor(controls[start:start + batch_size], dtype=dtype)
            out.append(sample(self.model_, ff, ctl, schedule, seed=seed + start).double().numpy())
        result = np.concatenate(out)
        return result[0] if single else result

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        extra = {"clip_shape": list(self.clip_shape_), "eval_history": self.eval_history_,
                 "loss_history": self.loss_history_}
        save_checkpoint(path, self.model_.state_dict(), self.get_params(), extra)

    @classmethod
    def load(cls, path) -> "ToyRelighter":
        state, config, extra = load_checkpoint(path)
        est = cls(**config)
        model = ControlledDenoiser(est.channels).to(est._torch_dtype())
        model.load_state_dict(state)
        est.model_ = model.eval()
        est.clip_shape_ = tuple(extra["clip_shape"])
        est.eval_history_ = [tuple(e) for e in extra["eval_history"]]
        est.loss_history_ = list(extra["loss_history"])
        return est
