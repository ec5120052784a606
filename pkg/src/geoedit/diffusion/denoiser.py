"""Trainable toy denoiser with an editable attention bottleneck.

Architecture (single channel 32x32 in, epsilon prediction out):

    conv 1->16 @32, conv s2 16->16 @16, conv 16->32 @16, conv s2 32->32 @8,
    conv 32->32 @8  ->  h (32 x 8 x 8)  ->  token attention (64 tokens)
    ->  [edit hook]  ->  mirrored decoder with additive skips  ->  1 x 32 x 32

Every conv output receives a per-sample channel bias projected from the
sinusoidal timestep embedding.  The final conv is zero-initialized so an
untrained model predicts exactly zero noise, which pins the untrained
loss baseline at E|eps|^2.

Two forward implementations exist on purpose: a numpy-only path for
sampling speed and a tape path for training.  They share the same
arithmetic, einsum orders included, and a test pins their outputs to
near-machine agreement.
"""

import numpy as np
from sklearn.base import BaseEstimator

from ..autodiff import (
    Adam,
    Module,
    Parameter,
    Rng,
    Tensor,
    add_channel_bias,
    backward,
    conv2d,
    matmul,
    mse,
    relu,
    uniform_init,
    upsample2,
)
from ..errors import ConfigError, ContractError, TrainingDivergedError
from ..pruning import feature_map_to_tokens, tokens_to_feature_map
from ..pruning.attention import PrunedAttentionLayer
from .schedule import NoiseSchedule, timestep_embedding

H_CHANNELS = 32
H_SIDE = 8
T_DIM = 64


def np_conv2d(x, w, b=None, stride=1, padding=0):
    """Numpy twin of the tape conv2d, same slice/einsum order."""
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((bsz, cout, ho, wo), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            patch = xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            out += np.einsum("bchw,oc->bohw", patch, w[:, :, ki, kj], optimize=True)
    if b is not None:
        out += b.reshape(1, cout, 1, 1)
    return out


class ToyDenoiser(Module):
    """Epsilon-prediction U-Net at 32x32 with a 64-token bottleneck."""

    def __init__(self, base: int = 16, seed: int = 0):
        super().__init__()
        self.base = base
        self.seed = seed
        self.trained_steps = 0
        rng = Rng(seed)
        c1, c2 = base, H_CHANNELS
        stream = iter(range(1000))

        def conv_param(name, cout, cin, k=3):
            self.add_param(name, uniform_init(rng.child(next(stream)), cin * k * k, (cout, cin, k, k)))
            self.add_param(name + "_b", np.zeros(cout))
            self.add_param(name + "_t", uniform_init(rng.child(next(stream)), T_DIM, (T_DIM, cout)))

        conv_param("e1", c1, 1)
        conv_param("e2", c1, c1)
        conv_param("e3", c2, c1)
        conv_param("e4", c2, c2)
        conv_param("mid", c2, c2)
        self.attn = PrunedAttentionLayer(channels=c2, seed=seed + 101)
        conv_param("d1", c1, c2)
        conv_param("d2", c1, c1)
        # zero-init output head: untrained prediction is exactly zero
        self.add_param("out_w", np.zeros((1, c1, 3, 3)))
        self.add_param("out_b", np.zeros(1))

    # ---------------- numpy path ----------------

    def _np_block(self, x, name, temb, stride=1):
        p = dict(self.parameters())
        y = np_conv2d(x, p[name].data, p[name + "_b"].data, stride=stride, padding=1)
        y = y + (temb @ p[name + "_t"].data)[:, :, None, None]
        return np.maximum(y, 0.0)

    def encode_np(self, x, temb):
        """Returns (pre-attention h map, skip activations)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ContractError(f"expected images of shape (B, 1, H, W), got {x.shape}")
        s1 = self._np_block(x, "e1", temb)
        y = self._np_block(s1, "e2", temb, stride=2)
        s2 = self._np_block(y, "e3", temb)
        y = self._np_block(s2, "e4", temb, stride=2)
        h_pre = self._np_block(y, "mid", temb)
        return h_pre, (s1, s2)

    def attend_np(self, h_pre, keep=None):
        tokens = feature_map_to_tokens(h_pre)
        att = self.attn.dense_tokens(tokens) if keep is None else self.attn.pruned_tokens(tokens, keep)
        return tokens_to_feature_map(att, H_SIDE, H_SIDE)

    def decode_np(self, h_map, skips, temb):
        s1, s2 = skips
        p = dict(self.parameters())
        y = h_map.repeat(2, axis=2).repeat(2, axis=3) + s2
        y = self._np_block(y, "d1", temb)
        y = y.repeat(2, axis=2).repeat(2, axis=3) + s1
        y = self._np_block(y, "d2", temb)
        return np_conv2d(y, p["out_w"].data, p["out_b"].data, padding=1)

    def forward_np(self, x, t, keep=None, edit_fn=None, return_cache=False):
        """Predict epsilon; `edit_fn(h_map, temb) -> h_map` hooks the bottleneck."""
        t = np.atleast_1d(np.asarray(t, dtype=np.int64))
        if t.shape[0] != np.asarray(x).shape[0]:
            raise ContractError(f"got {t.shape[0]} timesteps for {np.asarray(x).shape[0]} images")
        temb = timestep_embedding(t, T_DIM)
        h_pre, skips = self.encode_np(x, temb)
        h_map = self.attend_np(h_pre, keep=keep)
        if edit_fn is not None:
            h_map = edit_fn(h_map, temb)
        eps = self.decode_np(h_map, skips, temb)
        if return_cache:
            return eps, {"h_map": h_map, "h_pre": h_pre, "skips": skips, "temb": temb}
        return eps

    # ---------------- tape path ----------------

    def _tape_block(self, x, name, temb, stride=1):
        p = dict(self.parameters())
        y = conv2d(x, p[name], p[name + "_b"], stride=stride, padding=1)
        y = add_channel_bias(y, matmul(temb, p[name + "_t"]))
        return relu(y)

    def forward_tape(self, x, t):
        """Tape twin of forward_np (dense attention, no edit hook)."""
        t = np.atleast_1d(np.asarray(t, dtype=np.int64))
        temb = Tensor(timestep_embedding(t, T_DIM))
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        p = dict(self.parameters())
        s1 = self._tape_block(x, "e1", temb)
        y = self._tape_block(s1, "e2", temb, stride=2)
        s2 = self._tape_block(y, "e3", temb)
        y = self._tape_block(s2, "e4", temb, stride=2)
        h_pre = self._tape_block(y, "mid", temb)
        bsz = x.shape[0]
        tokens = _map_to_tokens_tape(h_pre)
        att = self.attn.dense_tokens_tape(tokens)
        h_map = _tokens_to_map_tape(att, bsz)
        y = upsample2(h_map) + s2
        y = self._tape_block(y, "d1", temb)
        y = upsample2(y) + s1
        y = self._tape_block(y, "d2", temb)
        return conv2d(y, p["out_w"], p["out_b"], padding=1)

    def decode_tape(self, h_map, skips, temb):
        """Tape decode from a (possibly edited) bottleneck map Tensor.

        Skips and temb come from a numpy encode pass and enter as constants,
        so gradients flow only through the bottleneck.  Arithmetic mirrors
        decode_np exactly (upsample2 is the repeat upsampling).
        """
        s1, s2 = skips
        p = dict(self.parameters())
        temb_t = temb if isinstance(temb, Tensor) else Tensor(np.asarray(temb, dtype=np.float64))
        y = upsample2(h_map) + Tensor(s2)
        y = self._tape_block(y, "d1", temb_t)
        y = upsample2(y) + Tensor(s1)
        y = self._tape_block(y, "d2", temb_t)
        return conv2d(y, p["out_w"], p["out_b"], padding=1)


def _map_to_tokens_tape(h):
    from ..autodiff import permute, reshape

    b, c, hh, ww = h.shape
    return reshape(permute(h, (0, 2, 3, 1)), (b, hh * ww, c))


def _tokens_to_map_tape(tokens, bsz):
    from ..autodiff import permute, reshape

    _, n, c = tokens.shape
    return permute(reshape(tokens, (bsz, H_SIDE, H_SIDE, c)), (0, 3, 1, 2))


class DenoiserTrainConfig:
    def __init__(self, steps=2000, batch_size=16, lr=2e-3, seed=0, log_every=100):
        if steps < 0:
            raise ConfigError(f"steps must be >= 0, got {steps}")
        if batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        if lr <= 0:
            raise ConfigError(f"lr must be positive, got {lr}")
        if log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {log_every}")
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.log_every = log_every


def noised_batch(x0, schedule, rng):
    """Sample (x_t, t, eps) for a clean batch under the schedule."""
    bsz = x0.shape[0]
    t = rng.integers(1, schedule.t_max + 1, bsz)
    eps = rng.normal(x0.shape)
    ab = schedule.alpha_bar_at(t)[:, None, None, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return x_t, t, eps


def train_denoiser(dataset, cfg: DenoiserTrainConfig | None = None,
                   model: ToyDenoiser | None = None, schedule: NoiseSchedule | None = None):
    """Epsilon-prediction training; returns (model, curve rows).

    A non-finite loss aborts with the last logged checkpoint attached, so
    a long run is never lost to a late blow-up.
    """
    cfg = cfg if cfg is not None else DenoiserTrainConfig()
    schedule = schedule if schedule is not None else NoiseSchedule()
    images = dataset.images() if hasattr(dataset, "images") else np.asarray(dataset)
    if images.ndim != 4 or images.shape[0] < 1:
        raise ContractError(f"expected a nonempty (n, 1, H, W) image stack, got {images.shape}")
    model = model if model is not None else ToyDenoiser(seed=cfg.seed)
    opt = Adam(model.param_list(), lr=cfg.lr)
    rng = Rng(cfg.seed).child(7)
    curve = []
    last_checkpoint = model.state_dict()
    for step in range(cfg.steps):
        idx = rng.choice(images.shape[0], size=min(cfg.batch_size, images.shape[0]))
        x_t, t, eps = noised_batch(images[idx], schedule, rng)
        pred = model.forward_tape(x_t, t)
        loss = mse(pred, Tensor(eps))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"denoiser loss became non-finite at step {step}", last_checkpoint=last_checkpoint
            )
        model.zero_grad()
        backward(loss)
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            curve.append({"step": step, "loss": value})
            last_checkpoint = model.state_dict()
    model.trained_steps += cfg.steps
    return model, curve


def heldout_denoising_loss(model, images, seed=0, schedule=None, repeats=4):
    """Mean epsilon-MSE on held-out images over seeded (t, eps) draws."""
    schedule = schedule if schedule is not None else NoiseSchedule()
    images = np.asarray(images)
    rng = Rng(seed).child(11)
    total = 0.0
    for _ in range(repeats):
        x_t, t, eps = noised_batch(images, schedule, rng)
        pred = model.forward_np(x_t, t)
        total += float(np.mean((pred - eps) ** 2))
    return total / repeats


def baseline_denoising_loss(images, seed=0, schedule=None, repeats=4):
    """The zero-predictor baseline on the same seeded draws."""
    schedule = schedule if schedule is not None else NoiseSchedule()
    images = np.asarray(images)
    rng = Rng(seed).child(11)
    total = 0.0
    for _ in range(repeats):
        _, _, eps = noised_batch(images, schedule, rng)
        total += float(np.mean(eps**2))
    return total / repeats


class DenoiserModel(BaseEstimator):
    """Estimator facade over train_denoiser.

    fit(X) trains on an (n, 1, 32, 32) stack; predict(X_t, t) returns the
    predicted noise for already-noised inputs.
    """

    def __init__(self, steps=2000, batch_size=16, lr=2e-3, seed=0, log_every=100):
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.log_every = log_every

    def fit(self, X, y=None):
        cfg = DenoiserTrainConfig(
            steps=self.steps, batch_size=self.batch_size, lr=self.lr,
            seed=self.seed, log_every=self.log_every,
        )
        self.model_, self.curve_ = train_denoiser(np.asarray(X), cfg)
        self.n_features_in_ = int(np.prod(np.asarray(X).shape[1:]))
        return self

    def predict(self, X_t, t):
        if not hasattr(self, "model_"):
            raise ContractError("DenoiserModel is not fitted; call fit first")
        return self.model_.forward_np(np.asarray(X_t), t)
