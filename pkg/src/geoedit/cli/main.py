"""Subcommand dispatcher: every workflow behind one entry point.

Exit codes: 0 on success, 1 on contract or configuration errors, 2 on
runtime failures (diverged training, failed selftests, provider outages
that cannot fall back).  Argument-parser usage errors print to stderr and
exit with argparse's own status.  The dispatcher is single threaded; only
recon-grid fans out, and only when --workers asks for it.

Stage timing in `edit` uses a monotonic clock and disjoint stages:
captioning (provider call plus text embedding), inversion (forward DDIM),
geodesic (time inside the bottleneck edit hook), generation (both reverse
DDIM passes minus the geodesic time), decoding (quantize and write PGMs).
The printed total is the sum of the five.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from ..autodiff import Rng
from ..autodiff.checkpoint import save_checkpoint
from ..diffusion.dataset import SyntheticDataset, paired_brightness_dataset
from ..diffusion.denoiser import DenoiserTrainConfig, ToyDenoiser, train_denoiser
from ..diffusion.editing import EditTrainConfig, GeodesicEditor, train_edit_module
from ..diffusion.sampler import EditConfig, ddim_generate, ddim_invert, recon_grid
from ..diffusion.schedule import NoiseSchedule
from ..enrichment.embedder import edit_direction
from ..enrichment.providers import CaptionRequest, ProviderConfig, enrich_or_fallback
from ..errors import ConfigError, ContractError, RuntimeFailure
from ..flops import FLOPS_CONVENTION, reference_arch, unet_flops_breakdown, validate_arch
from ..geometry.selftest import run_selftest
from ..imageio import read_pgm, write_pgm
from ..metrics import mae
from ..pruning.bench import bench_attention
from ..pruning.tokens import feature_map_to_tokens
from ..pruning.training import PrunerTrainConfig, train_pruning_head
from .artifacts import (
    load_denoiser,
    load_editor,
    load_pruner_head,
    save_denoiser,
    save_editor,
    save_pruner_head,
    write_csv,
)
from .config import config_hash, effective_config, load_config
from .manifest import write_manifest

SUBCOMMANDS = (
    "train-denoiser",
    "train-edit",
    "train-pruner",
    "invert",
    "edit",
    "recon-grid",
    "bench-attn",
    "flops",
    "selftest-geometry",
)


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="geoedit",
        description="Geodesic latent editing toolkit: training, inversion, "
        "editing, benchmarks, and selftests.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True, metavar="subcommand")

    def common(p, name):
        p.add_argument("--config", help="JSON run config; flags override its keys")
        p.add_argument("--out-dir", default=os.path.join("runs", name),
                       help="directory for outputs and the manifest")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")

    p = sub.add_parser("train-denoiser", help="fit the toy denoiser on synthetic shapes")
    common(p, "train-denoiser")
    p.add_argument("--steps", type=int, help="optimizer steps")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dataset-n", type=int, help="training image count")
    p.add_argument("--dataset-seed", type=int)

    p = sub.add_parser("train-edit", help="fit the geodesic edit module")
    common(p, "train-edit")
    p.add_argument("--denoiser", required=True, help="denoiser checkpoint (.remd)")
    p.add_argument("--steps", type=int, help="optimizer steps")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-pairs", type=int)
    p.add_argument("--pairs-n", type=int, help="training pair count")
    p.add_argument("--pairs-seed", type=int)
    p.add_argument("--t-low", type=int)
    p.add_argument("--t-high", type=int)
    p.add_argument("--source-text")
    p.add_argument("--target-text")

    p = sub.add_parser("train-pruner", help="fit the token-importance head")
    common(p, "train-pruner")
    p.add_argument("--denoiser", required=True, help="denoiser checkpoint (.remd)")
    p.add_argument("--steps", type=int, help="optimizer steps")
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda-sparsity", type=float)
    p.add_argument("--ascii", action="store_true", help="write P2 instead of P5 PGM")

    p = sub.add_parser("invert", help="push an image to the t0 noise level")
    common(p, "invert")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--image", help="input PGM (32x32); default draws a synthetic sample")
    p.add_argument("--sample-index", type=int, default=0)
    p.add_argument("--sample-seed", type=int, default=1000)
    p.add_argument("--t0", type=int)
    p.add_argument("--s-for", type=int)
    p.add_argument("--ascii", action="store_true", help="write P2 instead of P5 PGM")

    p = sub.add_parser("edit", help="caption, invert, edit, and regenerate one image")
    common(p, "edit")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--editor", required=True, help="edit-module checkpoint (.remd)")
    p.add_argument("--pruner", help="importance-head checkpoint; required when rho > 0")
    p.add_argument("--image", help="input PGM (32x32); default draws a synthetic sample")
    p.add_argument("--sample-index", type=int, default=0)
    p.add_argument("--sample-seed", type=int, default=1000)
    p.add_argument("--t0", type=int)
    p.add_argument("--s-for", type=int)
    p.add_argument("--s-gen", type=int)
    p.add_argument("--alpha-inner", type=float)
    p.add_argument("--alpha-outer", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--target-text")
    p.add_argument("--ascii", action="store_true", help="write P2 instead of P5 PGM")

    p = sub.add_parser("recon-grid", help="reconstruction quality over (t0, S_for, S_gen)")
    common(p, "recon-grid")
    p.add_argument("--denoiser", required=True)
    p.add_argument("--t0-list", type=_int_list, default=[300, 450, 600])
    p.add_argument("--s-for-list", type=_int_list, default=[6, 40, 500])
    p.add_argument("--s-gen-list", type=_int_list, default=[6, 40, 500])
    p.add_argument("--held-n", type=int, default=32, help="held-out image count")
    p.add_argument("--held-seed", type=int, default=200)
    p.add_argument("--workers", type=int, default=0, help="cell fan-out threads")

    p = sub.add_parser("bench-attn", help="latency of retained-token attention")
    common(p, "bench-attn")
    p.add_argument("--n-tokens", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--rhos", type=_float_list)
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("flops", help="analytic FLOPs breakdown of a UNet config")
    common(p, "flops")
    p.add_argument("--arch", help="architecture JSON; default is the bundled reference")
    p.add_argument("--res", type=_int_list, default=[256, 512],
                   help="comma-separated square resolutions")

    p = sub.add_parser("selftest-geometry", help="integrator vs analytic geodesics")
    common(p, "selftest-geometry")

    return parser


# argparse dest -> dotted config path, applied only when the flag was passed.
_OVERRIDES = {
    "train-denoiser": {
        "steps": "model.train_steps",
        "batch_size": "model.batch_size",
        "lr": "model.lr",
        "dataset_n": "model.dataset_n",
        "dataset_seed": "model.dataset_seed",
    },
    "train-edit": {
        "steps": "edit.train_steps",
        "lr": "edit.lr",
        "batch_pairs": "edit.batch_pairs",
        "pairs_n": "edit.pairs_n",
        "pairs_seed": "edit.pairs_seed",
        "t_low": "edit.t_low",
        "t_high": "edit.t_high",
        "source_text": "edit.source_text",
        "target_text": "edit.target_text",
    },
    "train-pruner": {
        "steps": "pruning.train_steps",
        "lr": "pruning.lr",
        "lambda_sparsity": "pruning.lambda_sparsity",
    },
    "invert": {"t0": "edit.t0", "s_for": "edit.s_for"},
    "edit": {
        "t0": "edit.t0",
        "s_for": "edit.s_for",
        "s_gen": "edit.s_gen",
        "alpha_inner": "edit.alpha_inner",
        "alpha_outer": "edit.alpha_outer",
        "rho": "edit.rho",
        "target_text": "edit.target_text",
    },
    "recon-grid": {},
    "bench-attn": {
        "n_tokens": "bench.n_tokens",
        "channels": "bench.channels",
        "rhos": "bench.rhos",
        "repeats": "bench.repeats",
    },
    "flops": {},
    "selftest-geometry": {},
}


def _prepare(args):
    """Merge config sources and create the output directory."""
    doc, raw = (None, None)
    if args.config:
        doc, raw = load_config(args.config)
    overrides = {"seed": getattr(args, "seed", None)}
    for dest, dotted in _OVERRIDES[args.cmd].items():
        overrides[dotted] = getattr(args, dest, None)
    cfg = effective_config(doc, overrides)
    os.makedirs(args.out_dir, exist_ok=True)
    return cfg, config_hash(raw, cfg)


def _schedule(cfg):
    s = cfg["schedule"]
    return NoiseSchedule(t_max=s["t_max"], beta_start=s["beta_start"],
                         beta_end=s["beta_end"])


def _require_file(path, role):
    if path is None:
        raise ConfigError(f"{role} checkpoint is required")
    if not os.path.isfile(path):
        raise ConfigError(f"{role} checkpoint not found: {path}")
    return path


def _load_input_image(args):
    """(1, 1, 32, 32) input plus labels when the source is synthetic."""
    if args.image:
        if not os.path.isfile(args.image):
            raise ConfigError(f"input image not found: {args.image}")
        img = read_pgm(args.image)
        if img.shape != (32, 32):
            raise ConfigError(f"input image must be 32x32, got {img.shape}")
        return img[None, None], None
    if args.sample_index < 0:
        raise ConfigError(f"--sample-index must be >= 0, got {args.sample_index}")
    # Samples are generated sequentially, so sample k is the same array for
    # any dataset size > k: the index is a stable identity under one seed.
    sample = SyntheticDataset(args.sample_index + 1, args.sample_seed)[args.sample_index]
    return sample.image[None], sample.labels


def _out(args, name):
    return os.path.join(args.out_dir, name)


def cmd_train_denoiser(args):
    started = time.monotonic()
    cfg, cfg_hash = _prepare(args)
    m = cfg["model"]
    dataset = SyntheticDataset(m["dataset_n"], m["dataset_seed"], noise=m["noise"])
    model = ToyDenoiser(base=m["base"], seed=cfg["seed"])
    train_cfg = DenoiserTrainConfig(
        steps=m["train_steps"], batch_size=m["batch_size"], lr=m["lr"],
        seed=cfg["seed"], log_every=m["log_every"],
    )
    model, curve = train_denoiser(dataset, train_cfg, model=model, schedule=_schedule(cfg))
    ckpt = _out(args, "denoiser.remd")
    save_denoiser(ckpt, model)
    curve_csv = write_csv(_out(args, "train_curve.csv"), curve)
    if curve:
        print(f"final loss {curve[-1]['loss']:.6f} after {m['train_steps']} steps")
    write_manifest(args.out_dir, args.cmd, cfg_hash, {}, [ckpt, curve_csv],
                   time.monotonic() - started)
    return 0


def cmd_train_edit(args):
    started = time.monotonic()
    cfg, cfg_hash = _prepare(args)
    e = cfg["edit"]
    denoiser_path = _require_file(args.denoiser, "denoiser")
    model = load_denoiser(denoiser_path, base=cfg["model"]["base"])
    pairs = paired_brightness_dataset(e["pairs_n"], e["pairs_seed"])
    d_edit = edit_direction(e["source_text"], e["target_text"])
    train_cfg = EditTrainConfig(
        steps=e["train_steps"], batch_pairs=e["batch_pairs"], lr=e["lr"],
        field_lr_scale=e["field_lr_scale"], seed=cfg["seed"],
        w_dir=e["w_dir"], w_fid=e["w_fid"], w_reg=e["w_reg"],
        t_low=e["t_low"], t_high=e["t_high"],
    )
    (field, tangent), curve = train_edit_module(
        pairs, model, d_edit, train_cfg, schedule=_schedule(cfg)
    )
    ckpt = _out(args, "editor.remd")
    save_editor(ckpt, field, tangent)
    curve_csv = write_csv(_out(args, "edit_curve.csv"), curve)
    if curve:
        print(f"final loss {curve[-1]['loss']:.6f} after {e['train_steps']} steps")
    write_manifest(args.out_dir, args.cmd, cfg_hash,
                   {"denoiser": denoiser_path}, [ckpt, curve_csv],
                   time.monotonic() - started)
    return 0


def cmd_train_pruner(args):
    started = time.monotonic()
    cfg, cfg_hash = _prepare(args)
    p, e = cfg["pruning"], cfg["edit"]
    denoiser_path = _require_file(args.denoiser, "denoiser")
    model = load_denoiser(denoiser_path, base=cfg["model"]["base"])
    schedule = _schedule(cfg)
    d_edit = edit_direction(e["source_text"], e["target_text"])
    images = SyntheticDataset(p["dataset_n"], p["dataset_seed"]).images()
    rng = Rng(cfg["seed"]).child(11)
    maps = []
    for lo in range(0, images.shape[0], p["maps_per_batch"]):
        x0 = images[lo:lo + p["maps_per_batch"]]
        t = int(rng.integers(1, schedule.t_max + 1))
        ab = schedule.alpha_bar_at(t)
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * rng.normal(x0.shape)
        _, cache = model.forward_np(
            x_t, np.full(x0.shape[0], t, dtype=np.int64), return_cache=True
        )
        maps.append((cache["h_pre"], d_edit))
    train_cfg = PrunerTrainConfig(
        lambda_sparsity=p["lambda_sparsity"], lr=p["lr"], steps=p["train_steps"],
        seed=cfg["seed"], log_every=p["log_every"],
    )
    head, curve = train_pruning_head(maps, model.attn, train_cfg,
                                     edit_dim=d_edit.shape[0])
    ckpt = _out(args, "pruner.remd")
    save_pruner_head(ckpt, head)
    curve_csv = write_csv(_out(args, "pruner_curve.csv"), curve)
    # importance heatmap of the first map: one pixel per bottleneck token
    tokens = feature_map_to_tokens(maps[0][0])
    scores = head.score(tokens, d_edit)[0]
    side = int(round(np.sqrt(scores.shape[0])))
    heat = _out(args, "importance.pgm")
    write_pgm(heat, scores.reshape(side, side), vmin=0.0, vmax=1.0,
              binary=not args.ascii)
    if curve:
        print(f"final loss {curve[-1]['loss']:.6f} after {p['train_steps']} steps")
    write_manifest(args.out_dir, args.cmd, cfg_hash,
                   {"denoiser": denoiser_path}, [ckpt, curve_csv, heat],
                   time.monotonic() - started)
    return 0


def cmd_invert(args):
    started = time.monotonic()
    cfg, cfg_hash = _prepare(args)
    e = cfg["edit"]
    denoiser_path = _require_file(args.denoiser, "denoiser")
    model = load_denoiser(denoiser_path, base=cfg["model"]["base"])
    x0, _ = _load_input_image(args)
    inv = ddim_invert(model, x0, e["t0"], e["s_for"], schedule=_schedule(cfg))
    if inv.untrained:
        print("warning: denoiser checkpoint reports zero training steps", file=sys.stderr)
    latent = _out(args, "latent.remd")
    save_checkpoint(latent, {"x_t": inv.x_t, "ladder": inv.ladder.astype(np.float64)})
    # visualization only: noise-scale data clamped to +-3
    latent_pgm = _out(args, "latent.pgm")
    write_pgm(latent_pgm, inv.x_t[0, 0], vmin=-3.0, vmax=3.0, binary=not args.ascii)
    print(f"inverted to t0={e['t0']} over {len(inv.ladder) - 1} hops")
    write_manifest(args.out_dir, args.cmd, cfg_hash,
                   {"denoiser": denoiser_path}, [latent, latent_pgm],
                   time.monotonic() - started)
    return 0


class _TimedEditor:
    """Delegates the bottleneck hook, accumulating its wall-clock time."""

    def __init__(self, editor, clock):
        self._editor = editor
        self._clock = clock

    def edit_h(self, h_map, temb, alpha_inner):
        start = time.perf_counter()
        out = self._editor.edit_h(h_map, temb, alpha_inner)
        self._clock["geodesic"] += time.perf_counter() - start
        return out


def cmd_edit(args):
    started = time.monotonic()
    cfg, cfg_hash = _prepare(args)
    e, c = cfg["edit"], cfg["caption"]
    denoiser_path = _require_file(args.denoiser, "denoiser")
    editor_path = _require_file(args.editor, "edit-module")
    model = load_denoiser(denoiser_path, base=cfg["model"]["base"])
    field, tangent = load_editor(editor_path)
    x0, labels = _load_input_image(args)
    checkpoints = {"denoiser": denoiser_path, "edit-module": editor_path}

    clock = {"geodesic": 0.0}

    # captioning: describe the input, then embed the text pair
    t_mark = time.perf_counter()
    provider = ProviderConfig(
        backend=c["backend"], endpoint=c["endpoint"] or None,
        model=c["model"] or None, timeout_ms=c["timeout_ms"],
    )
    req = CaptionRequest(image=x0[0, 0], instruction=c["instruction"], labels=labels)
    caption, fell_back = enrich_or_fallback(req, provider, base_text=e["source_text"])
    d_edit = edit_direction(caption.text, e["target_text"])
    clock["captioning"] = time.perf_counter() - t_mark

    editor = GeodesicEditor(r_max=float(tangent.retraction.r_max))
    editor.field_, editor.tangent_, editor.d_edit_ = field, tangent, d_edit

    head = None
    if e["rho"] > 0.0:
        pruner_path = _require_file(args.pruner, "pruning-head")
        head = load_pruner_head(pruner_path, field.dim, d_edit.shape[0])
        checkpoints["pruning-head"] = pruner_path

    schedule = _schedule(cfg)
    gen_cfg = EditConfig(
        t0=e["t0"], s_for=e["s_for"], s_gen=e["s_gen"],
        alpha_inner=e["alpha_inner"], alpha_outer=e["alpha_outer"],
        rho=e["rho"], outer_per_step=e["outer_per_step"],
    )
    plain_cfg = EditConfig(t0=e["t0"], s_for=e["s_for"], s_gen=e["s_gen"],
                           outer_per_step=e["outer_per_step"])
    pruner = (head, d_edit, e["rho"]) if head is not None else None

    # inversion: one forward DDIM pass shared by both reverse passes
    t_mark = time.perf_counter()
    inv = ddim_invert(model, x0, gen_cfg.t0, gen_cfg.s_for, schedule=schedule)
    clock["inversion"] = time.perf_counter() - t_mark
    if inv.untrained:
        print("warning: denoiser checkpoint reports zero training steps", file=sys.stderr)

    # generation: edited pass plus the paired plain reconstruction
    t_mark = time.perf_counter()
    x_edit = ddim_generate(model, inv.x_t, gen_cfg, editor=_TimedEditor(editor, clock),
                           schedule=schedule, pruner=pruner)
    x_plain = ddim_generate(model, inv.x_t, plain_cfg, schedule=schedule)
    clock["generation"] = time.perf_counter() - t_mark - clock["geodesic"]

    # decoding: quantize both results to PGM artifacts
    t_mark = time.perf_counter()
    edited_pgm = _out(args, "edited.pgm")
    recon_pgm = _out(args, "recon.pgm")
    write_pgm(edited_pgm, x_edit[0, 0], binary=not args.ascii)
    write_pgm(recon_pgm, x_plain[0, 0], binary=not args.ascii)
    clock["decoding"] = time.perf_counter() - t_mark

    stages = ("captioning", "inversion", "geodesic", "generation", "decoding")
    total = sum(clock[s] for s in stages)
    print("timing[s] " + " ".join(f"{s}={clock[s]:.4f}" for s in stages)
          + f" total={total:.4f}")
    print(f"caption[{caption.provider}] {caption.text!r}"
          + (" (fallback)" if fell_back else ""))
    print(f"mean pixel delta vs plain recon: {float(np.mean(x_edit - x_plain)):+.4f}")
    write_manifest(
        args.out_dir, args.cmd, cfg_hash, checkpoints, [edited_pgm, recon_pgm],
        time.monotonic() - started,
        extra={
            "stage_seconds": {s: clock[s] for s in stages},
            "stage_total_s": total,
            "caption_text": caption.text,
            "caption_provider": caption.provider,
            "caption_fallback": fell_back,
        },
    )
    return 0


def cmd_recon_grid(args):
    started = time.monotonic()
    cfg, cfg_hash = _prepare(args)
    denoiser_path = _require_file(args.denoiser, "denoiser")
    model = load_denoiser(denoiser_path, base=cfg["model"]["base"])
    if args.held_n < 1:
        raise ConfigError(f"--held-n must be >= 1, got {args.held_n}")
    images = SyntheticDataset(args.held_n, args.held_seed).images()
    rows = recon_grid(model, images, args.t0_list, args.s_for_list,
                      args.s_gen_list, schedule=_schedule(cfg),
                      workers=args.workers)
    grid_csv = write_csv(
        _out(args, "grid.csv"), rows,
        columns=["t0", "s_for", "s_gen", "mae", "ssim", "n_images", "seconds"],
    )
    for r in rows:
        print(f"t0={r['t0']:4d} s_for={r['s_for']:4d} s_gen={r['s_gen']:4d} "
              f"mae={r['mae']:.4f} ssim={r['ssim']:.4f} n={r['n_images']}")
    write_manifest(args.out_dir, args.cmd, cfg_hash,
                   {"denoiser": denoiser_path}, [grid_csv],
                   time.monotonic() - started)
    return 0


def cmd_bench_attn(args):
    started = time.monotonic()
    cfg, cfg_hash = _prepare(args)
    b = cfg["bench"]
    rows = bench_attention(n_tokens=b["n_tokens"], channels=b["channels"],
                           rhos=tuple(b["rhos"]), repeats=b["repeats"],
                           seed=cfg["seed"])
    bench_csv = write_csv(_out(args, "bench.csv"), rows)
    for r in rows:
        print(f"rho={r['rho']:.2f} k={r['k']:5d} median_ms={r['median_ms']:.3f} "
              f"speedup={r['speedup_vs_dense']:.2f}x")
    write_manifest(args.out_dir, args.cmd, cfg_hash, {}, [bench_csv],
                   time.monotonic() - started)
    return 0


def cmd_flops(args):
    started = time.monotonic()
    cfg, cfg_hash = _prepare(args)
    if args.arch:
        if not os.path.isfile(args.arch):
            raise ConfigError(f"architecture file not found: {args.arch}")
        with open(args.arch, encoding="utf-8") as f:
            try:
                arch = validate_arch(json.load(f))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"architecture file {args.arch} is not valid JSON: {exc}")
    else:
        arch = reference_arch()
    if not args.res:
        raise ConfigError("--res needs at least one resolution")
    rows = [unet_flops_breakdown(arch, r).as_row() for r in args.res]
    flops_csv = write_csv(_out(args, "flops.csv"), rows)
    print(f"convention: {FLOPS_CONVENTION}")
    for r in rows:
        total = (r["attention_flops"] + r["convolution_flops"]
                 + r["resnet_flops"] + r["other_flops"])
        print(f"res={r['resolution']:5d} total={total:.3e} "
              f"attention_share={r['attention_share']:.3f} "
              f"attn/conv={r['attention_to_conv_ratio']:.3f}")
    write_manifest(args.out_dir, args.cmd, cfg_hash, {}, [flops_csv],
                   time.monotonic() - started,
                   extra={"convention": FLOPS_CONVENTION})
    return 0


def cmd_selftest_geometry(args):
    started = time.monotonic()
    cfg, cfg_hash = _prepare(args)
    rows = [vars(r) for r in run_selftest(seed=cfg["seed"])]
    suite_csv = write_csv(_out(args, "selftest.csv"), rows)
    for r in rows:
        status = "ok" if r["passed"] else "FAIL"
        print(f"[{status}] {r['manifold']}: {r['test']} "
              f"(max_error={r['max_error']:.3e}, steps={r['accepted_steps']})")
    write_manifest(args.out_dir, args.cmd, cfg_hash, {}, [suite_csv],
                   time.monotonic() - started)
    failed = [r for r in rows if not r["passed"]]
    if failed:
        raise RuntimeFailure(f"{len(failed)} geometry selftests failed")
    return 0


_COMMANDS = {
    "train-denoiser": cmd_train_denoiser,
    "train-edit": cmd_train_edit,
    "train-pruner": cmd_train_pruner,
    "invert": cmd_invert,
    "edit": cmd_edit,
    "recon-grid": cmd_recon_grid,
    "bench-attn": cmd_bench_attn,
    "flops": cmd_flops,
    "selftest-geometry": cmd_selftest_geometry,
}


def dispatch(argv):
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.cmd](args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeFailure as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


def main(argv=None):
    return dispatch(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
