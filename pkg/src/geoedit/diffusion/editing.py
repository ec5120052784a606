"""Learned geodesic edits in the denoiser's bottleneck token space.

Each of the 64 bottleneck tokens is a point on a learned 32-dim manifold.
The tangent head maps (token, timestep embedding, edit direction) to an
initial velocity through the norm-capping retraction; the exponential map
under the learned contraction field turns that velocity into an edited
token.  Both the tangent head and the field head start at zero, so an
untrained editor moves nothing: edit-path neutrality holds bit-exactly
before any training.

Training freezes the denoiser and supervises single-step predictions at
random depths: the edited clean-image prediction should match the paired
high-attribute image inside the shape mask (directional term) while
staying on the fidelity path outside it.
"""

import numpy as np
from sklearn.base import BaseEstimator

from ..autodiff import (
    Adam,
    Module,
    Rng,
    Tensor,
    backward,
    concat,
    constant,
    matmul,
    mse,
    mul,
    reshape,
    scale,
    uniform_init,
)
from ..blending import inner_blend
from ..errors import (
    ConfigError,
    ContractError,
    SolverDivergenceError,
    TrainingDivergedError,
)
from ..geometry import (
    ChristoffelModel,
    RetractionConfig,
    SolverConfig,
    exp_map,
    exp_map_tape,
    retract,
    retract_tape,
)
from ..pruning import feature_map_to_tokens, tokens_to_feature_map
from .denoiser import H_CHANNELS, H_SIDE, T_DIM
from .schedule import NoiseSchedule, timestep_embedding


class TangentHead(Module):
    """Linear map (token, t_emb, d_edit) -> retracted initial velocity."""

    def __init__(self, channels=H_CHANNELS, t_dim=T_DIM, edit_dim=64,
                 r_max=1.0, init_scale=0.0, seed=0):
        super().__init__()
        self.channels = channels
        self.t_dim = t_dim
        self.edit_dim = edit_dim
        self.retraction = RetractionConfig(r_max=r_max)
        z_dim = channels + t_dim + edit_dim
        if init_scale == 0.0:
            w = np.zeros((z_dim, channels))
        else:
            w = init_scale * uniform_init(Rng(seed), z_dim, (z_dim, channels))
        self.w = self.add_param("w", w)

    def _context(self, n_rows, t_emb, d_edit):
        t_emb = np.asarray(t_emb, dtype=np.float64)
        d_edit = np.asarray(d_edit, dtype=np.float64)
        if t_emb.shape != (self.t_dim,) or d_edit.shape != (self.edit_dim,):
            raise ContractError(
                f"tangent context shapes: t_emb {t_emb.shape} (want ({self.t_dim},)), "
                f"d_edit {d_edit.shape} (want ({self.edit_dim},))"
            )
        ctx = np.concatenate([t_emb, d_edit])
        return np.broadcast_to(ctx, (n_rows, ctx.shape[0]))

    def v0_np(self, rows, t_emb, d_edit):
        rows = np.asarray(rows, dtype=np.float64)
        z = np.concatenate([rows, self._context(rows.shape[0], t_emb, d_edit)], axis=1)
        return retract(z @ self.w.data, self.retraction)

    def v0_tape(self, rows, t_emb, d_edit):
        """Returns (retracted velocity, raw pre-retraction output)."""
        ctx = constant(self._context(rows.shape[0], t_emb, d_edit).copy())
        z = concat([rows, ctx], axis=1)
        raw = matmul(z, self.w)
        return retract_tape(raw, self.retraction), raw


class EditTrainConfig:
    def __init__(self, steps=150, batch_pairs=4, lr=5e-3, field_lr_scale=0.1,
                 seed=0, log_every=10, w_dir=1.0, w_fid=5.0, w_reg=0.01,
                 t_low=100, t_high=600):
        if steps < 0 or batch_pairs < 1 or lr <= 0 or log_every < 1:
            raise ConfigError("steps >= 0, batch_pairs >= 1, lr > 0, log_every >= 1 required")
        if not 0.0 <= field_lr_scale <= 1.0:
            raise ConfigError(f"field_lr_scale must be in [0, 1], got {field_lr_scale}")
        if w_reg < 0:
            raise ConfigError(f"w_reg must be >= 0, got {w_reg}")
        if not 1 <= t_low <= t_high:
            raise ConfigError(f"need 1 <= t_low <= t_high, got {t_low}, {t_high}")
        self.steps = steps
        self.batch_pairs = batch_pairs
        self.lr = lr
        self.field_lr_scale = field_lr_scale
        self.seed = seed
        self.log_every = log_every
        self.w_dir = w_dir
        self.w_fid = w_fid
        self.w_reg = w_reg
        self.t_low = t_low
        self.t_high = t_high


def _edited_h_rows_tape(rows_np, tangent, field, t_emb, d_edit, solver_cfg):
    """Tape endpoint of the per-token geodesics (training path, alpha_inner=1)."""
    gamma0 = constant(rows_np.copy())
    v0, raw = tangent.v0_tape(gamma0, t_emb, d_edit)
    endpoint, _ = exp_map_tape(gamma0, v0, field.bind(t_emb), solver_cfg)
    return endpoint, raw


def _field_caps(field, growth=1.25, head_floor=0.25):
    """Per-parameter Frobenius-norm caps keeping the geodesic ODE integrable.

    The acceleration is quadratic in velocity, so a strong field admits
    finite-time blowup inside the unit-time exponential map.  The head
    (w2, b2) scales the acceleration linearly and is zero at init, so it
    gets an absolute cap; the remaining parameters stay near their init
    norms.  Caps are a trust region, not a guarantee; the training loop
    additionally backs the head off when the integrator underflows.
    """
    caps = {}
    for name, p in field.parameters():
        base = name.rsplit(".", 1)[-1]
        if base in ("w2", "b2"):
            caps[name] = max(growth * float(np.linalg.norm(p.data)), head_floor)
        else:
            caps[name] = growth * float(np.linalg.norm(p.data))
    return caps


def _scale_param(p, factor):
    scaled = p.data * factor
    p.data = scaled
    p.data.setflags(write=False)


def _project_field(field, caps):
    for name, p in field.parameters():
        norm = float(np.linalg.norm(p.data))
        if norm > caps[name]:
            _scale_param(p, caps[name] / norm)


def _dampen_field_head(field, factor=0.5):
    """Scale the field head toward the always-integrable flat field."""
    for name, p in field.parameters():
        if name.rsplit(".", 1)[-1] in ("w2", "b2"):
            _scale_param(p, factor)


def masked_mean_probe(images, masks):
    """Per-sample mean pixel value inside the mask: the brightness probe."""
    images = np.asarray(images, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    flat_i = images.reshape(images.shape[0], -1)
    flat_m = masks.reshape(masks.shape[0], -1)
    counts = flat_m.sum(axis=1)
    if np.any(counts == 0):
        raise ContractError("empty mask in brightness probe")
    return (flat_i * flat_m).sum(axis=1) / counts


def train_edit_module(pairs, model, d_edit, cfg: EditTrainConfig | None = None,
                      editor=None, schedule: NoiseSchedule | None = None):
    """Train (field, tangent head) against paired low/high-attribute samples.

    Returns ((field, tangent), curve).  Pass `editor=(field, tangent)` to
    continue training an existing pair (iteration rounds).
    """
    if not pairs:
        raise ContractError("edit training needs a nonempty pair list")
    cfg = cfg if cfg is not None else EditTrainConfig()
    schedule = schedule if schedule is not None else NoiseSchedule()
    d_edit = np.asarray(d_edit, dtype=np.float64)
    if editor is not None:
        field, tangent = editor
    else:
        field = ChristoffelModel(dim=H_CHANNELS, t_dim=T_DIM, seed=cfg.seed + 300)
        tangent = TangentHead(edit_dim=d_edit.shape[0], seed=cfg.seed + 301)
    solver_cfg = SolverConfig()
    # The geodesic ODE is quadratic in velocity; a fast-growing field head
    # can reach finite-time blowup inside the integrator.  The field learns
    # on a slower clock than the tangent head to stay in the stable regime.
    opt = Adam(tangent.param_list(), lr=cfg.lr)
    opt_field = None
    caps = None
    if cfg.field_lr_scale > 0.0:
        opt_field = Adam(field.param_list(), lr=cfg.lr * cfg.field_lr_scale)
        caps = _field_caps(field)
    rng = Rng(cfg.seed).child(23)
    curve = []
    backoffs, max_backoffs = 0, 8
    for step in range(cfg.steps):
        take = [int(i) for i in rng.choice(len(pairs), size=min(cfg.batch_pairs, len(pairs)))]
        x_lo = np.stack([pairs[i][0].image for i in take])
        x_hi = np.stack([pairs[i][1].image for i in take])
        masks = np.stack([pairs[i][0].mask[None] for i in take]).astype(np.float64)
        t = int(rng.integers(cfg.t_low, cfg.t_high + 1))
        ab = schedule.alpha_bar_at(t)
        eps = rng.normal(x_lo.shape)
        x_t = np.sqrt(ab) * x_lo + np.sqrt(1.0 - ab) * eps
        t_vec = np.full(x_t.shape[0], t, dtype=np.int64)
        temb = timestep_embedding(t_vec, T_DIM)

        _, cache = model.forward_np(x_t, t_vec, return_cache=True)
        h_tokens = feature_map_to_tokens(cache["h_map"])
        bsz, n_tok, c = h_tokens.shape
        rows_np = h_tokens.reshape(bsz * n_tok, c)

        try:
            endpoint, v_raw = _edited_h_rows_tape(
                rows_np, tangent, field, temb[0], d_edit, solver_cfg
            )
        except SolverDivergenceError as exc:
            # Dial the head toward the flat field and drop this batch.  The
            # cap shrinks with it so the head cannot climb straight back
            # into the unstable region.
            backoffs += 1
            if backoffs > max_backoffs:
                raise TrainingDivergedError(
                    f"geodesic integration kept blowing up; gave up at step {step}: {exc}"
                ) from exc
            _dampen_field_head(field)
            if caps is not None:
                for name in caps:
                    if name.rsplit(".", 1)[-1] in ("w2", "b2"):
                        caps[name] *= 0.5
            curve.append({"step": step, "loss": float("nan"), "dir": float("nan"),
                          "fid": float("nan"), "backoff": backoffs})
            continue
        h_edit_map = _rows_to_map_tape(endpoint, bsz)
        eps_sem = model.decode_tape(h_edit_map, cache["skips"], temb)
        # x0 prediction from the edited noise estimate
        x0_sem = scale(
            constant(x_t) + scale(eps_sem, -float(np.sqrt(1.0 - ab))), 1.0 / float(np.sqrt(ab))
        )
        eps_fid = model.decode_np(cache["h_map"], cache["skips"], temb)
        x0_fid = (x_t - np.sqrt(1.0 - ab) * eps_fid) / np.sqrt(ab)

        # directional term: the edit should shift the masked brightness of
        # the fidelity prediction by the pair's probe gap.  Supervising the
        # shift (not the absolute level) makes identical pairs a zero-edit
        # optimum instead of asking the edit to fix reconstruction error.
        m_norm = masks.reshape(bsz, -1)
        m_norm = m_norm / m_norm.sum(axis=1, keepdims=True)
        probe_sem = matmul(
            reshape(x0_sem, (bsz, 1, 1024)), constant(m_norm[:, :, None])
        )
        gap = masked_mean_probe(x_hi, masks) - masked_mean_probe(x_lo, masks)
        target = (masked_mean_probe(x0_fid, masks) + gap)[:, None, None]
        dir_term = mse(probe_sem, constant(target))
        # fidelity term: off-mask content pinned to the fidelity path
        inv = constant((1.0 - masks).copy())
        fid_term = mse(mul(x0_sem, inv), constant(x0_fid * (1.0 - masks)))
        # small ridge on the raw (pre-retraction) velocities: the probe pins
        # only the masked mean, so zero-mean on-mask deviations would drift
        # unpenalized, and the retraction's saturation would then hide them
        # from every other gradient
        reg_term = mse(v_raw, constant(np.zeros(v_raw.shape)))
        loss = (scale(dir_term, cfg.w_dir) + scale(fid_term, cfg.w_fid)
                + scale(reg_term, cfg.w_reg))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDivergedError(f"edit loss became non-finite at step {step}")
        field.zero_grad()
        tangent.zero_grad()
        model.zero_grad()  # frozen, but keep stale grads from accumulating
        backward(loss)
        opt.step()
        if opt_field is not None:
            opt_field.step()
            _project_field(field, caps)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            curve.append({
                "step": step,
                "loss": value,
                "dir": float(dir_term.data),
                "fid": float(fid_term.data),
            })
    return (field, tangent), curve


def _rows_to_map_tape(rows, bsz):
    from ..autodiff import permute

    tok = reshape(rows, (bsz, H_SIDE * H_SIDE, H_CHANNELS))
    return permute(reshape(tok, (bsz, H_SIDE, H_SIDE, H_CHANNELS)), (0, 3, 1, 2))


def mean_offset_norm(field, tangent, model, images, t, d_edit, schedule=None, seed=0):
    """Mean geodesic offset norm over the images' bottleneck tokens."""
    schedule = schedule if schedule is not None else NoiseSchedule()
    rng = Rng(seed).child(31)
    images = np.asarray(images)
    ab = schedule.alpha_bar_at(t)
    x_t = np.sqrt(ab) * images + np.sqrt(1.0 - ab) * rng.normal(images.shape)
    t_vec = np.full(images.shape[0], t, dtype=np.int64)
    _, cache = model.forward_np(x_t, t_vec, return_cache=True)
    tokens = feature_map_to_tokens(cache["h_map"])
    rows = tokens.reshape(-1, tokens.shape[-1])
    temb = cache["temb"][0]
    v0 = tangent.v0_np(rows, temb, d_edit)
    endpoint = exp_map(rows, v0, field.bind(temb))
    return float(np.mean(np.linalg.norm(endpoint - rows, axis=1)))


class GeodesicEditor(BaseEstimator):
    """sklearn-style facade: fit on pairs, then edit bottleneck maps.

    After fit, `edit_h(h_map, temb, alpha_inner)` is the hook the sampler
    installs at the denoiser bottleneck.
    """

    def __init__(self, steps=150, batch_pairs=4, lr=5e-3, seed=0, log_every=10,
                 w_dir=1.0, w_fid=5.0, w_reg=0.01, t_low=100, t_high=600, r_max=1.0):
        self.steps = steps
        self.batch_pairs = batch_pairs
        self.lr = lr
        self.seed = seed
        self.log_every = log_every
        self.w_dir = w_dir
        self.w_fid = w_fid
        self.w_reg = w_reg
        self.t_low = t_low
        self.t_high = t_high
        self.r_max = r_max

    def _cfg(self):
        return EditTrainConfig(
            steps=self.steps, batch_pairs=self.batch_pairs, lr=self.lr, seed=self.seed,
            log_every=self.log_every, w_dir=self.w_dir, w_fid=self.w_fid,
            w_reg=self.w_reg, t_low=self.t_low, t_high=self.t_high,
        )

    def fit(self, X, y=None, model=None, d_edit=None):
        """X: list of (low Sample, high Sample) pairs; model: frozen denoiser."""
        if model is None or d_edit is None:
            raise ContractError("GeodesicEditor.fit needs model= and d_edit=")
        (self.field_, self.tangent_), self.curve_ = train_edit_module(
            X, model, d_edit, self._cfg()
        )
        self.d_edit_ = np.asarray(d_edit, dtype=np.float64)
        return self

    def _require_fitted(self):
        if not hasattr(self, "field_"):
            raise ContractError("GeodesicEditor is not fitted; call fit first")

    def offset_tokens(self, tokens, temb_row):
        """Geodesic offsets for (B, N, C) bottleneck tokens at one timestep."""
        self._require_fitted()
        bsz, n_tok, c = tokens.shape
        rows = tokens.reshape(bsz * n_tok, c)
        v0 = self.tangent_.v0_np(rows, temb_row, self.d_edit_)
        endpoint = exp_map(rows, v0, self.field_.bind(temb_row))
        return (endpoint - rows).reshape(bsz, n_tok, c)

    def edit_h(self, h_map, temb, alpha_inner):
        """Inner-blend the bottleneck map toward its geodesic endpoints.

        All rows of `temb` must embed the same timestep (one bind per call).
        """
        self._require_fitted()
        temb = np.asarray(temb, dtype=np.float64)
        temb_row = temb[0] if temb.ndim == 2 else temb
        if temb.ndim == 2 and not np.all(temb == temb[0]):
            raise ContractError("edit_h requires a single shared timestep per batch")
        if alpha_inner == 0.0:
            return np.asarray(h_map, dtype=np.float64).copy()
        tokens = feature_map_to_tokens(h_map)
        bsz, n_tok, c = tokens.shape
        rows = tokens.reshape(bsz * n_tok, c)
        offsets = self.offset_tokens(tokens, temb_row).reshape(bsz * n_tok, c)
        endpoints = rows + offsets
        # empty tokens carry nothing to edit; slerp also needs nonzero norms
        valid = (np.linalg.norm(rows, axis=1) > 1e-12) & (
            np.linalg.norm(endpoints, axis=1) > 1e-12
        )
        out = rows.copy()
        if np.any(valid):
            out[valid] = inner_blend(rows[valid], endpoints[valid], alpha_inner)
        return tokens_to_feature_map(out.reshape(bsz, n_tok, c), H_SIDE, H_SIDE)
