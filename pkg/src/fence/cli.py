"""Command-line pipeline: synth, mask, train, impute, evaluate, trace, run.

Exit codes: 0 success, 2 configuration problems, 3 data problems,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .backends import OracleBackend
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (PRESETS, guidance_from, load_world_spec, parse_config_file,
                     resolve_config, schedule_from, world_from, write_resolved)
from .diffusion import quadratic_schedule
from .errors import (ConfigError, DataError, DivergenceError, InvalidInputError,
                     StateError)
from .grid import (DatasetSplit, GraphSpec, MaskMatrix, TrafficGrid,
                   chronological_split, load_grid_csv, load_mask_csv,
                   observed_stats, save_grid_csv, save_mask_csv, sliding_windows)
from .guidance import GuidanceConfig, mode_from_string
from .masking import MaskPatternConfig, mask_sc_tc, mask_sr_tc
from .metrics import crps_masked, point_metrics
from .neural import NetConfig, NeuralDenoiser
from .sampler import emit_trace, impute
from .training import TrainConfig, finetune_conditional, train_unconditional
from .world import observations_from_mask, ring_hops

__all__ = ["main"]


# -- shared argument groups ---------------------------------------------------

def _add_schedule_args(parser):
    parser.add_argument("--steps", type=int, default=50, help="diffusion steps K")
    parser.add_argument("--beta1", type=float, default=1e-4, help="minimum noise level")
    parser.add_argument("--beta-k", type=float, default=0.5, help="maximum noise level")
    parser.add_argument("--variance-mode", default="beta_tilde",
                        choices=("beta_tilde", "beta"), help="reverse variance")


def _schedule(args):
    return quadratic_schedule(args.steps, args.beta1, args.beta_k,
                              variance_mode=args.variance_mode)


def _add_guidance_args(parser):
    parser.add_argument("--mode", default="fence",
                        help="fence | cfg:<lambda> | none")
    parser.add_argument("--pi", type=float, default=0.5)
    parser.add_argument("--lambda-ref", type=float, default=1.6)
    parser.add_argument("--t0", type=float, default=0.8)
    parser.add_argument("--t1", type=float, default=0.5)
    parser.add_argument("--alpha-scale", type=float, default=10.0)
    parser.add_argument("--lambda-max", type=float, default=10.0)
    parser.add_argument("--scope", default="cluster",
                        choices=("cluster", "global", "per_node"))
    parser.add_argument("--clusters", default="auto",
                        help="cluster count K_c, or auto = N/20")


def _guidance(args) -> tuple[GuidanceConfig, int | None]:
    mode, fixed = mode_from_string(args.mode)
    gcfg = GuidanceConfig(mode=mode, fixed_lambda=fixed, pi=args.pi,
                          lambda_ref=args.lambda_ref, t0=args.t0, t1=args.t1,
                          alpha_scale=args.alpha_scale,
                          lambda_max=args.lambda_max, scope=args.scope)
    if args.clusters == "auto":
        return gcfg, None
    try:
        return gcfg, int(args.clusters)
    except ValueError:
        raise ConfigError(f"--clusters must be an integer or auto, got {args.clusters!r}") \
            from None


def _ring_graph(n_nodes: int) -> GraphSpec:
    adjacency = (ring_hops(n_nodes) == 1).astype(np.float64)
    return GraphSpec(adjacency=adjacency)


def _synth_series(world, length: int) -> np.ndarray:
    """Concatenate independent world draws into an N x length series."""
    rng = np.random.Generator(np.random.Philox(key=world.seed))
    reps = math.ceil(length / world.n_steps)
    blocks = [world.sample_clean(rng) for _ in range(reps)]
    return np.concatenate(blocks, axis=1)[:, :length]


# -- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    world = load_world_spec(args.spec)
    series = _synth_series(world, args.length)
    save_grid_csv(args.out, series)
    print(f"wrote {world.n_nodes}x{args.length} series to {args.out}")
    return 0


def cmd_mask(args) -> int:
    cfg = MaskPatternConfig(args.pattern, args.alpha, args.patch,
                            args.communities, args.seed)
    if args.nodes is None:
        raise ConfigError("--nodes is required")
    if args.pattern == "SC-TC":
        mask = mask_sc_tc(_ring_graph(args.nodes), args.length, cfg)
    else:
        mask = mask_sr_tc(args.nodes, args.length, cfg)
    save_mask_csv(args.out, mask)
    observed = float(np.mean(mask.entries))
    print(f"wrote {args.pattern} mask to {args.out} (observed fraction {observed:.3f})")
    return 0


def _load_training_split(args, stats=None) -> tuple[DatasetSplit, float, float]:
    series, raw_mask = load_grid_csv(args.data)
    mask_entries = raw_mask.entries
    if args.mask:
        extra = load_mask_csv(args.mask).entries
        if extra.shape != mask_entries.shape:
            raise DataError(f"--mask shape {extra.shape} vs data {mask_entries.shape}")
        mask_entries = mask_entries * extra
    series = np.where(mask_entries == 1, np.nan_to_num(series), 0.0)

    seg_values = chronological_split(series)
    seg_masks = chronological_split(mask_entries)
    if stats is None:
        mean, std = observed_stats(seg_values[0], MaskMatrix(seg_masks[0]))
    else:
        mean, std = stats

    def windows(values, mask, stride):
        if values.shape[1] < args.window:
            return []
        grids = sliding_windows((values - mean) / std, args.window, stride)
        masks = sliding_windows(mask.astype(np.float64), args.window, stride)
        return [(g, MaskMatrix(m.values.astype(np.int64)))
                for g, m in zip(grids, masks)]

    split = DatasetSplit(
        train=tuple(windows(seg_values[0], seg_masks[0], args.stride)),
        validation=tuple(windows(seg_values[1], seg_masks[1], args.window)),
        test=tuple(windows(seg_values[2], seg_masks[2], args.window)),
        window_length=args.window,
        normalization=(mean, std),
    )
    return split, mean, std


def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=args.epochs, lr=args.lr, patience=args.patience,
                       weight_decay=args.weight_decay, batch_size=args.batch,
                       seed=args.seed)


def _save_model(path, model: NeuralDenoiser, mean: float, std: float):
    state = model.state_dict()
    state["norm/mean"] = np.float64(mean)
    state["norm/std"] = np.float64(std)
    save_checkpoint(path, state)


def _load_model(path) -> tuple[NeuralDenoiser, float, float]:
    state = load_checkpoint(path)
    mean = float(state.pop("norm/mean", 0.0))
    std = float(state.pop("norm/std", 1.0))
    return NeuralDenoiser.from_state_dict(state), mean, std


def cmd_train_uncond(args) -> int:
    split, mean, std = _load_training_split(args)
    sched = _schedule(args)
    net_cfg = NetConfig(n_nodes=split.train[0][0].n_nodes, d_model=args.d_model,
                        n_layers=args.layers, n_heads=args.heads)
    result = train_unconditional(split, _train_config(args), sched=sched,
                                 net_cfg=net_cfg)
    _save_model(args.out, result.model, mean, std)
    print(f"stage-1 finished after {len(result.train_losses)} epochs "
          f"(best epoch {result.best_epoch})")
    print(f"wrote checkpoint {args.out}")
    return 0


def cmd_finetune_cond(args) -> int:
    sched = _schedule(args)
    if args.init:
        backend, mean, std = _load_model(args.init)
        split, mean, std = _load_training_split(args, stats=(mean, std))
    else:
        backend = None
        split, mean, std = _load_training_split(args)
    net_cfg = NetConfig(n_nodes=split.train[0][0].n_nodes, d_model=args.d_model,
                        n_layers=args.layers, n_heads=args.heads)
    result = finetune_conditional(backend, split, _train_config(args),
                                  sched=sched, net_cfg=net_cfg)
    _save_model(args.out, result.model, mean, std)
    print(f"stage-2 finished after {len(result.train_losses)} epochs "
          f"(best epoch {result.best_epoch})")
    print(f"wrote checkpoint {args.out}")
    return 0


def _impute_from_args(args, n_samples: int):
    sched = _schedule(args)
    gcfg, n_clusters = _guidance(args)
    values, raw_mask = load_grid_csv(args.grid)
    mask_entries = raw_mask.entries
    if args.mask:
        extra = load_mask_csv(args.mask).entries
        if extra.shape != mask_entries.shape:
            raise DataError(f"--mask shape {extra.shape} vs grid {mask_entries.shape}")
        mask_entries = mask_entries * extra
    values = np.where(mask_entries == 1, np.nan_to_num(values), 0.0)
    mask = MaskMatrix(mask_entries)

    mean, std = 0.0, 1.0
    if args.oracle:
        if args.checkpoint_cond or args.checkpoint_uncond:
            raise ConfigError("--oracle and checkpoints are mutually exclusive")
        world = load_world_spec(args.oracle)
        idx, vals = observations_from_mask(values, mask_entries)
        observed_world = world.observe(idx, vals)
        backend = backend_uncond = OracleBackend(observed_world, sched)
        work_grid = TrafficGrid(values)
    else:
        if not args.checkpoint_uncond:
            raise ConfigError("need --checkpoint-uncond (or --oracle)")
        backend_uncond, mean, std = _load_model(args.checkpoint_uncond)
        if args.checkpoint_cond:
            backend, mean, std = _load_model(args.checkpoint_cond)
        elif gcfg.mode == "none":
            backend = None
        else:
            raise ConfigError(f"mode {args.mode!r} needs --checkpoint-cond")
        work_grid = TrafficGrid((values - mean) * (mask_entries == 1) / std)

    result = impute(backend, backend_uncond, work_grid, mask, sched, gcfg,
                    n_clusters=n_clusters, n_samples=n_samples, seed=args.seed,
                    anchoring=args.anchoring, n_threads=args.threads)
    return result, mean, std


def cmd_impute(args) -> int:
    result, mean, std = _impute_from_args(args, args.samples)
    imputed = result.mean_imputation.values * std + mean
    save_grid_csv(args.out, imputed)
    if args.trace_out:
        emit_trace(result, args.trace_out)
        print(f"wrote trace {args.trace_out}")
    print(f"wrote mean imputation over {args.samples} samples to {args.out}")
    return 0


def cmd_trace(args) -> int:
    result, _, _ = _impute_from_args(args, 1)
    emit_trace(result, args.trace_out)
    print(f"wrote single-trajectory trace {args.trace_out}")
    return 0


def _format_float(x: float) -> str:
    return repr(float(x))


def cmd_evaluate(args) -> int:
    pred, _ = load_grid_csv(args.pred)
    truth, _ = load_grid_csv(args.truth)
    eval_mask = load_mask_csv(args.eval_mask)
    mae, rmse, mape = point_metrics(np.nan_to_num(pred), np.nan_to_num(truth),
                                    eval_mask)
    crps_value = float("nan")
    if args.ensemble_prefix:
        prefix = Path(args.ensemble_prefix)
        files = sorted(prefix.parent.glob(prefix.name + "_sample_*.csv"))
        if not files:
            raise DataError(f"no ensemble files match {prefix}_sample_*.csv")
        stack = np.stack([np.nan_to_num(load_grid_csv(f)[0]) for f in files])
        crps_value = crps_masked(stack, np.nan_to_num(truth), eval_mask)
    line = ",".join(_format_float(v) for v in (mae, rmse, mape, crps_value))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mae,rmse,mape,crps\n")
        fh.write(line + "\n")
    if args.per_node_out:
        entries = eval_mask.entries
        with open(args.per_node_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("node,mae,rmse,mape\n")
            for i in range(entries.shape[0]):
                if not (entries[i] == 1).any():
                    continue
                row = point_metrics(np.nan_to_num(pred[i:i + 1]),
                                    np.nan_to_num(truth[i:i + 1]),
                                    entries[i:i + 1])
                fh.write(f"{i}," + ",".join(_format_float(v) for v in row) + "\n")
    print(f"mae,rmse,mape,crps = {line}")
    return 0


# -- full pipeline ------------------------------------------------------------

def _pipeline_mask(cfg, n_nodes: int, length: int) -> MaskMatrix:
    m = cfg["mask"]
    pattern_cfg = MaskPatternConfig(m["pattern"], m["alpha"],
                                    min(m["patch"], length),
                                    m["communities"] or None, m["seed"])
    if m["pattern"] == "SC-TC":
        return mask_sc_tc(_ring_graph(n_nodes), length, pattern_cfg)
    return mask_sr_tc(n_nodes, length, pattern_cfg)


def _pipeline_backends(cfg, world, sched, truth_values, mask):
    """Returns (backend_cond, backend_uncond, mean, std) for the run command."""
    if cfg["experiment"]["backend"] == "oracle":
        idx, vals = observations_from_mask(truth_values, mask.entries)
        observed_world = world.observe(idx, vals)
        oracle = OracleBackend(observed_world, sched)
        return oracle, oracle, 0.0, 1.0

    t = cfg["training"]
    length = cfg["data"]["length"]
    series = _synth_series(world, length)
    seg = chronological_split(series)
    mean, std = observed_stats(seg[0], MaskMatrix(np.ones_like(seg[0], dtype=np.int64)))

    def windows(values, stride):
        window = world.n_steps
        if values.shape[1] < window:
            return ()
        grids = sliding_windows((values - mean) / std, window, stride)
        ones = MaskMatrix(np.ones((world.n_nodes, window), dtype=np.int64))
        return tuple((g, ones) for g in grids)

    split = DatasetSplit(train=windows(seg[0], cfg["data"]["stride"]),
                         validation=windows(seg[1], world.n_steps),
                         test=windows(seg[2], world.n_steps),
                         window_length=world.n_steps,
                         normalization=(mean, std))
    net_cfg = NetConfig(n_nodes=world.n_nodes, d_model=t["d_model"],
                        n_layers=t["layers"], n_heads=t["heads"])
    stage1 = train_unconditional(
        split, TrainConfig(epochs=t["epochs_uncond"], lr=t["lr_uncond"],
                           patience=t["patience_uncond"],
                           weight_decay=t["weight_decay_uncond"],
                           batch_size=t["batch"], seed=t["seed"]),
        sched=sched, net_cfg=net_cfg)
    stage2 = finetune_conditional(
        stage1.model, split,
        TrainConfig(epochs=t["epochs_cond"], lr=t["lr_cond"],
                    patience=t["patience_cond"],
                    weight_decay=t["weight_decay_cond"],
                    batch_size=t["batch"], seed=t["seed"]),
        sched=sched, net_cfg=net_cfg)
    return stage2.model, stage1.model, mean, std


def cmd_run(args) -> int:
    file_values = parse_config_file(args.config) if args.config else None
    cfg = resolve_config(file_values, args.preset)
    if args.threads is not None:
        cfg["sampler"]["threads"] = args.threads
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out_dir / "config.resolved")

    world = world_from(cfg)
    sched = schedule_from(cfg)
    gcfg, n_clusters = guidance_from(cfg)

    truth = world.sample_clean(np.random.Generator(np.random.Philox(key=world.seed)))
    mask = _pipeline_mask(cfg, world.n_nodes, world.n_steps)
    backend, backend_uncond, mean, std = _pipeline_backends(
        cfg, world, sched, truth, mask)

    observed = TrafficGrid((truth - mean) * (mask.entries == 1) / std)
    s = cfg["sampler"]
    seed = cfg["experiment"]["seed"]
    result = impute(backend, backend_uncond, observed, mask, sched, gcfg,
                    n_clusters=n_clusters, n_samples=s["samples"], seed=seed,
                    anchoring=s["anchoring"], n_threads=s["threads"])
    emit_trace(result, out_dir / "trace.csv")

    eval_mask = MaskMatrix(1 - mask.entries)
    prediction = result.mean_imputation.values * std + mean
    mae, rmse, mape = point_metrics(prediction, truth, eval_mask)
    if s["crps_samples"] == s["samples"]:
        crps_result = result
    else:
        crps_result = impute(backend, backend_uncond, observed, mask, sched,
                             gcfg, n_clusters=n_clusters,
                             n_samples=s["crps_samples"], seed=seed,
                             anchoring=s["anchoring"], n_threads=s["threads"])
    stack = np.stack([g.values * std + mean for g in crps_result.samples])
    crps_value = crps_masked(stack, truth, eval_mask)

    line = ",".join(_format_float(v) for v in (mae, rmse, mape, crps_value))
    with open(out_dir / "report.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mae,rmse,mape,crps\n")
        fh.write(line + "\n")
    print(f"mae,rmse,mape,crps = {line}")
    print(f"report in {out_dir}")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fence",
        description="Feedback-controlled guidance for diffusion imputation "
                    "of spatial-temporal grids.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="sample a series from a Gaussian world spec")
    p.add_argument("--spec", required=True, help="oracle spec file (key = value)")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mask", help="generate an SR-TC or SC-TC mask CSV")
    p.add_argument("--pattern", default="SR-TC", choices=("SR-TC", "SC-TC"))
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--patch", type=int, default=12)
    p.add_argument("--communities", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    def add_train_args(p):
        p.add_argument("--data", required=True, help="grid CSV")
        p.add_argument("--mask", default=None, help="extra observation mask CSV")
        p.add_argument("--window", type=int, default=12)
        p.add_argument("--stride", type=int, default=1)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--patience", type=int)
        p.add_argument("--weight-decay", type=float)
        p.add_argument("--batch", type=int, default=8)
        p.add_argument("--d-model", type=int, default=16)
        p.add_argument("--layers", type=int, default=2)
        p.add_argument("--heads", type=int, default=2)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="checkpoint path")
        _add_schedule_args(p)

    p = sub.add_parser("train-uncond", help="stage 1: unconditional denoiser")
    add_train_args(p)
    p.set_defaults(func=cmd_train_uncond, epochs=150, lr=2e-3, patience=20,
                   weight_decay=1e-6)

    p = sub.add_parser("finetune-cond", help="stage 2: conditional fine-tune")
    add_train_args(p)
    p.add_argument("--init", default=None, help="stage-1 checkpoint")
    p.set_defaults(func=cmd_finetune_cond, epochs=80, lr=1e-3, patience=10,
                   weight_decay=1e-5)

    def add_impute_args(p, with_samples: bool):
        p.add_argument("--grid", required=True, help="observed grid CSV")
        p.add_argument("--mask", default=None, help="observation mask CSV")
        p.add_argument("--oracle", default=None, help="Gaussian world spec file")
        p.add_argument("--checkpoint-cond", default=None)
        p.add_argument("--checkpoint-uncond", default=None)
        if with_samples:
            p.add_argument("--samples", type=int, default=10)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--anchoring", default="free", choices=("free", "clamp"))
        p.add_argument("--threads", type=int, default=1)
        _add_schedule_args(p)
        _add_guidance_args(p)

    p = sub.add_parser("impute", help="run the guided reverse sampler")
    add_impute_args(p, with_samples=True)
    p.add_argument("--out", required=True, help="mean imputation CSV")
    p.add_argument("--trace-out", default=None)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("trace", help="single-trajectory run, trace only")
    add_impute_args(p, with_samples=False)
    p.add_argument("--trace-out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("evaluate", help="metrics from prediction vs truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--eval-mask", required=True,
                   help="1 marks entries to evaluate (the originally missing)")
    p.add_argument("--ensemble-prefix", default=None,
                   help="path prefix of <prefix>_sample_*.csv for CRPS")
    p.add_argument("--out", required=True)
    p.add_argument("--per-node-out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", default=None,
                   help=f"one of: {', '.join(sorted(PRESETS))}")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, StateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        where = f" at step {exc.step}" if exc.step is not None else ""
        print(f"error: diverged{where}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
