"""DDIM inversion and dual-path regeneration with geodesic edits.

Inversion walks a clean image up a deterministic timestep ladder to x_t0.
Generation walks back down; each step decodes the bottleneck twice when
an edit is active:

  fidelity path   dense attention, untouched bottleneck  -> x0_fid
  semantic path   optional token pruning, geodesic edit  -> x0_sem

The semantic deviation is fused into the fidelity prediction through its
orthogonal component on the fidelity sphere, and the effective noise for
the DDIM update is recomputed from the fused x0.  The no-edit path runs
the same update arithmetic on x0_fid alone, so a zeroed edit (alpha_inner
= 0, or no editor at all) reproduces the plain reconstruction bit for
bit.
"""

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..blending import orthogonal_component, outer_blend
from ..errors import ConfigError, ContractError
from ..metrics import mae, ssim
from ..pruning import feature_map_to_tokens, select_topk
from .schedule import T_MAX, NoiseSchedule

FORWARD_SUBSAMPLE_THRESHOLD = 500
FORWARD_SUBSAMPLE_SIZE = 8


def _ladder(schedule, t0, steps):
    # t0 = 0 is the degenerate round trip: no hops at all
    if t0 == 0:
        return np.array([0], dtype=np.int64)
    return schedule.inversion_ladder(t0, steps)


class EditConfig:
    """Knobs for one invert-and-regenerate run."""

    def __init__(self, t0=450, s_for=40, s_gen=40, alpha_inner=0.0, alpha_outer=0.0,
                 rho=0.0, outer_per_step=True):
        if not 0 <= t0 <= T_MAX:
            raise ConfigError(f"t0 must be in [0, {T_MAX}], got {t0}")
        if s_for < 1 or s_gen < 1:
            raise ConfigError(f"step counts must be >= 1, got s_for={s_for}, s_gen={s_gen}")
        for name, a in (("alpha_inner", alpha_inner), ("alpha_outer", alpha_outer)):
            if not 0.0 <= a <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {a}")
        if not 0.0 <= rho < 1.0:
            raise ConfigError(f"rho must be in [0, 1), got {rho}")
        self.t0 = int(t0)
        self.s_for = int(s_for)
        self.s_gen = int(s_gen)
        self.alpha_inner = float(alpha_inner)
        self.alpha_outer = float(alpha_outer)
        self.rho = float(rho)
        self.outer_per_step = bool(outer_per_step)


class InversionResult:
    def __init__(self, x_t, ladder, untrained):
        self.x_t = x_t
        self.ladder = ladder
        self.untrained = untrained


def _x0_from_eps(x_t, eps, ab):
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def ddim_invert(model, x0, t0, steps, schedule: NoiseSchedule | None = None):
    """Deterministically push clean images to noise level t0.

    Each hop evaluates the epsilon estimate at its source timestep, i.e. at
    the current state, the same explicit-update convention the reverse
    sampler uses.  Evaluating at the destination instead would make forward
    hops exact mirrors of reverse hops, and a round trip with matched step
    counts would then cancel most of its own discretization error; that
    flatters matched-ladder cells but inverts the usual more-steps-is-better
    ordering everywhere else.
    """
    schedule = schedule if schedule is not None else NoiseSchedule()
    x = np.asarray(x0, dtype=np.float64).copy()
    if x.ndim != 4:
        raise ContractError(f"expected (B, 1, H, W) images, got shape {x.shape}")
    ladder = _ladder(schedule, t0, steps)
    untrained = getattr(model, "trained_steps", 0) == 0
    for i in range(len(ladder) - 1):
        t_cur, t_next = int(ladder[i]), int(ladder[i + 1])
        t_vec = np.full(x.shape[0], t_cur, dtype=np.int64)
        eps = model.forward_np(x, t_vec)
        ab_cur = schedule.alpha_bar_at(t_cur)
        ab_next = schedule.alpha_bar_at(t_next)
        x0_pred = _x0_from_eps(x, eps, ab_cur)
        x = np.sqrt(ab_next) * x0_pred + np.sqrt(1.0 - ab_next) * eps
    return InversionResult(x, ladder, untrained)


def _semantic_x0(model, x_t, cache, ab, editor, alpha_inner, pruner):
    """Decode the semantic path: pruned attention, then the geodesic edit.

    The semantic pass always recomputes its own bottleneck attention rather
    than reusing the fidelity pass's cached map, so its cost is a monotone
    function of the retained-token count: raising rho can only remove work.
    """
    if pruner is not None:
        head, d_edit, rho = pruner
        if rho > 0.0:
            tokens_pre = feature_map_to_tokens(cache["h_pre"])
            keep = select_topk(head.score(tokens_pre, d_edit), rho)
            h_map = model.attend_np(cache["h_pre"], keep=keep)
        else:
            h_map = model.attend_np(cache["h_pre"])
    else:
        h_map = model.attend_np(cache["h_pre"])
    if editor is not None and alpha_inner > 0.0:
        h_map = editor.edit_h(h_map, cache["temb"], alpha_inner)
    eps_sem = model.decode_np(h_map, cache["skips"], cache["temb"])
    return _x0_from_eps(x_t, eps_sem, ab)


def ddim_generate(model, x_t0, cfg: EditConfig, editor=None,
                  schedule: NoiseSchedule | None = None, pruner=None):
    """Walk x_t0 back to a clean image under the edit configuration.

    `pruner` is (head, d_edit, rho_override) or None; pruning touches only
    the semantic decode, never the fidelity path.
    """
    schedule = schedule if schedule is not None else NoiseSchedule()
    x = np.asarray(x_t0, dtype=np.float64).copy()
    ladder = _ladder(schedule, cfg.t0, cfg.s_gen)[::-1]
    edit_active = editor is not None and cfg.alpha_inner > 0.0
    prune_active = pruner is not None and pruner[2] > 0.0
    semantic_active = edit_active or prune_active
    for i in range(len(ladder) - 1):
        t_cur, t_prev = int(ladder[i]), int(ladder[i + 1])
        t_vec = np.full(x.shape[0], t_cur, dtype=np.int64)
        ab_cur = schedule.alpha_bar_at(t_cur)
        ab_prev = schedule.alpha_bar_at(t_prev)
        eps_fid, cache = model.forward_np(x, t_vec, return_cache=True)
        x0_fid = _x0_from_eps(x, eps_fid, ab_cur)
        if semantic_active:
            x0_sem = _semantic_x0(
                model, x, cache, ab_cur, editor, cfg.alpha_inner, pruner
            )
            last_step = i == len(ladder) - 2
            if cfg.outer_per_step or last_step:
                o = orthogonal_component(x0_sem, x0_fid)
                x0_used = outer_blend(x0_fid, o, cfg.alpha_outer)
            else:
                x0_used = x0_sem
        else:
            x0_used = x0_fid
        eps_eff = (x - np.sqrt(ab_cur) * x0_used) / np.sqrt(1.0 - ab_cur)
        x = np.sqrt(ab_prev) * x0_used + np.sqrt(1.0 - ab_prev) * eps_eff
    return x


def reconstruct(model, x0, cfg: EditConfig, editor=None,
                schedule: NoiseSchedule | None = None, pruner=None):
    """Round trip: invert to t0 with s_for steps, regenerate with s_gen."""
    schedule = schedule if schedule is not None else NoiseSchedule()
    inv = ddim_invert(model, x0, cfg.t0, cfg.s_for, schedule)
    x_rec = ddim_generate(model, inv.x_t, cfg, editor=editor, schedule=schedule,
                          pruner=pruner)
    return x_rec, inv


def _cell_metrics(model, images, cfg, schedule):
    x_rec, _ = reconstruct(model, images, cfg, schedule=schedule)
    maes = [float(mae(images[i, 0], x_rec[i, 0])) for i in range(images.shape[0])]
    ssims = [float(ssim(images[i, 0], x_rec[i, 0])) for i in range(images.shape[0])]
    return maes, ssims


def recon_grid(model, images, t0_values, s_for_values, s_gen_values,
               schedule: NoiseSchedule | None = None, workers: int = 0,
               subsample_seed: int = 0):
    """Reconstruction quality grid over (t0, s_for, s_gen).

    Cells with s_for >= 500 subsample the image set to 8 (forward cost is
    linear in s_for and those cells are trend anchors, not precision
    measurements).  Returns row dicts sorted by (t0, s_for, s_gen).
    """
    schedule = schedule if schedule is not None else NoiseSchedule()
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[0] < 1:
        raise ContractError(f"expected a nonempty (n, 1, H, W) stack, got {images.shape}")
    cells = [
        (int(t0), int(s_for), int(s_gen))
        for t0 in t0_values for s_for in s_for_values for s_gen in s_gen_values
    ]

    def run_cell(cell):
        t0, s_for, s_gen = cell
        idx = np.arange(images.shape[0])
        if s_for >= FORWARD_SUBSAMPLE_THRESHOLD and images.shape[0] > FORWARD_SUBSAMPLE_SIZE:
            idx = np.linspace(0, images.shape[0] - 1, FORWARD_SUBSAMPLE_SIZE).astype(int)
        imgs = images[idx]
        cfg = EditConfig(t0=t0, s_for=s_for, s_gen=s_gen)
        start = time.perf_counter()
        maes, ssims = _cell_metrics(model, imgs, cfg, schedule)
        # per-image values let callers compare cells with different image
        # subsets on their shared indices instead of across mismatched means
        return {
            "t0": t0, "s_for": s_for, "s_gen": s_gen,
            "mae": float(np.mean(maes)), "ssim": float(np.mean(ssims)),
            "n_images": int(imgs.shape[0]),
            "seconds": time.perf_counter() - start,
            "image_index": [int(i) for i in idx],
            "mae_per_image": maes,
        }

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(c) for c in cells]
    rows.sort(key=lambda r: (r["t0"], r["s_for"], r["s_gen"]))
    return rows


def edit_image(model, x0, editor, cfg: EditConfig, d_edit=None, head=None,
               schedule: NoiseSchedule | None = None):
    """Invert, regenerate with the edit, and report probe deltas.

    Returns (x_edit, x_plain) where x_plain is the same round trip with the
    edit disabled, for paired comparisons on identical trajectories.
    """
    schedule = schedule if schedule is not None else NoiseSchedule()
    pruner = None
    if head is not None and cfg.rho > 0.0:
        if d_edit is None:
            d_edit = editor.d_edit_
        pruner = (head, d_edit, cfg.rho)
    inv = ddim_invert(model, x0, cfg.t0, cfg.s_for, schedule)
    x_edit = ddim_generate(model, inv.x_t, cfg, editor=editor, schedule=schedule,
                           pruner=pruner)
    plain_cfg = EditConfig(t0=cfg.t0, s_for=cfg.s_for, s_gen=cfg.s_gen,
                           alpha_inner=0.0, alpha_outer=0.0, rho=0.0,
                           outer_per_step=cfg.outer_per_step)
    x_plain = ddim_generate(model, inv.x_t, plain_cfg, schedule=schedule)
    return x_edit, x_plain
