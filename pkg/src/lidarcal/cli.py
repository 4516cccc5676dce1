"""Command-line surface.

Subcommands: gen-data, train, optimize, eval, render, inspect.
Exit codes: 0 success (including a non-converged optimization result),
1 I/O failure, 2 validation failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import checkpoint_io, dataset_io, render
from .config import RunConfig, load_config
from .dataset_io import FormatError
from .inverse import OptResult, optimize
from .nets import GeneratorNet, set_weights
from .oracle import derive_seed, generate_dataset, oracle_eval, random_code, validate_params
from .signal import estimate_depth_batch, inliers_rate
from .train import Checkpoint, stability_rank, train, sample_generator

_PARAM_DRAW_TAG = 0x9A


class ValidationError(ValueError):
    pass


def _load_cfg(path) -> RunConfig:
    try:
        return load_config(path)
    except ValueError as e:
        raise ValidationError(f"config: {e}") from e


def _transmitted_code(cfg: RunConfig) -> np.ndarray:
    return random_code(cfg.camera.L, cfg.data.code_seed, cfg.data.code_density,
                       cfg.data.code_run_length)


def _draw_param_sets(cfg: RunConfig, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(
        derive_seed(cfg.data.params_seed, _PARAM_DRAW_TAG)))
    m = cfg.data.params_margin
    return m + (1.0 - 2.0 * m) * rng.random((n, 8))


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args.config)
    oracle_cfg = cfg.oracle
    if args.seed is not None:
        oracle_cfg = type(oracle_cfg)(**{**_oracle_kwargs(oracle_cfg), "base_seed": args.seed})
    alpha = _transmitted_code(cfg)
    params = _draw_param_sets(cfg, cfg.data.groups)
    ds = generate_dataset(alpha, params, cfg.data.reps, oracle_cfg,
                          threads=max(1, args.threads))
    digest = dataset_io.write_dataset(args.out, ds)
    print(f"wrote {args.out}: {ds.n_groups} groups x {ds.reps} reps, L={ds.L}")
    print(f"digest {digest.hex()}")
    return 0


def _oracle_kwargs(oc) -> dict:
    return {f: getattr(oc, f) for f in oc.__dataclass_fields__}


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = type(train_cfg)(**{**vars(train_cfg), "seed": args.seed})
    ds = dataset_io.read_dataset(args.dataset)
    if ds.L != cfg.camera.L:
        raise ValidationError(f"dataset L={ds.L} != camera L={cfg.camera.L}")
    resume = checkpoint_io.read_checkpoint(args.resume) if args.resume else None

    loss_path = args.out + ".losses.csv"
    raster_prefix = args.out + ".raster"
    order = stability_rank(ds)
    show = list(order[:5]) + list(order[-5:])

    def snapshot(iteration, G):
        real = np.concatenate([ds.batches[g] for g in show])
        fake = np.concatenate([
            sample_generator(G, ds.params[g], ds.reps,
                             derive_seed(train_cfg.seed, 0x5A, iteration, int(g)))
            for g in show])
        render.write_pgm(f"{raster_prefix}.{iteration:06d}.real.pgm", real)
        render.write_pgm(f"{raster_prefix}.{iteration:06d}.gen.pgm", fake)

    with open(loss_path, "w") as logf:
        logf.write("iteration,d_loss,g_loss,mean_term,var_term,alpha\n")

        def log(rec):
            logf.write(f"{rec.iteration},{rec.d_loss:.9g},{rec.g_loss:.9g},"
                       f"{rec.mean_term:.9g},{rec.var_term:.9g},{rec.alpha:.6g}\n")

        ckpt, _ = train(ds, train_cfg, resume=resume,
                        snapshot_fn=snapshot if train_cfg.snapshot_every else None,
                        log_fn=log)
    checkpoint_io.write_checkpoint(args.out, ckpt)
    print(f"wrote {args.out} after {ckpt.iteration} iterations")
    return 0


def _load_generator(ckpt: Checkpoint) -> GeneratorNet:
    G = GeneratorNet(ckpt.L, z_dim=ckpt.z_dim)
    set_weights(G, ckpt.g_weights)
    return G


def write_params_record(path, result: OptResult) -> None:
    with open(path, "w") as f:
        for i, p in enumerate(result.params):
            f.write(f"p{i} = {float(p)!r}\n")
        f.write(f"converged = {'true' if result.converged else 'false'}\n")
        f.write(f"iterations = {result.iterations}\n")


def read_params_record(path) -> np.ndarray:
    values = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    try:
        p = np.array([float(values[f"p{i}"]) for i in range(8)])
    except KeyError as e:
        raise FormatError(f"params record missing key {e}") from e
    return p


def cmd_optimize(args) -> int:
    cfg = _load_cfg(args.config)
    opt_cfg = cfg.opt
    if args.seed is not None:
        opt_cfg = type(opt_cfg)(**{**vars(opt_cfg), "seed": args.seed})
    ckpt = checkpoint_io.read_checkpoint(args.checkpoint)
    if ckpt.L != cfg.camera.L:
        raise ValidationError(f"checkpoint L={ckpt.L} != camera L={cfg.camera.L}")
    G = _load_generator(ckpt)
    alpha = _transmitted_code(cfg)
    result = optimize(G, alpha, cfg.camera, opt_cfg)
    write_params_record(args.out, result)
    with open(args.out + ".trace.csv", "w") as f:
        f.write("iteration,loss_median,loss_variance,R," +
                ",".join(f"p{i}" for i in range(8)) + "\n")
        for row in result.trace:
            f.write(f"{row.iteration},{row.loss_median:.9g},{row.loss_variance:.9g},"
                    f"{row.inliers:.6g}," + ",".join(f"{p:.9g}" for p in row.params) + "\n")
    status = "converged" if result.converged else "did not converge"
    print(f"wrote {args.out}: {status} after {result.iterations} iterations")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args.config)
    after = read_params_record(args.params)
    try:
        validate_params(after)
    except ValueError as e:
        raise ValidationError(str(e)) from e
    seed = cfg.eval.baseline_seed if args.seed is None else args.seed
    before = np.random.Generator(np.random.PCG64(
        derive_seed(seed, 0xBA5E))).random(8)
    alpha = _transmitted_code(cfg)
    n = cfg.eval.n

    lines = ["# summary", "label,R,median_mm,std_mm"]
    hists = []
    for label, params in (("before", before), ("after", after)):
        deltas = _eval_deltas(alpha, params, cfg, derive_seed(seed, 0xE0A1), n)
        r = inliers_rate(deltas, cfg.camera.delta_in)
        lines.append(f"{label},{r:.6g},{np.median(deltas):.6f},{np.std(deltas):.6f}")
        hists.append((label, deltas))
    for label, deltas in hists:
        lines.append(f"# histogram {label}")
        lines += render.histogram_csv_lines(deltas, cfg.camera.delta_max)
    with open(args.out, "w") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return 0


def _eval_deltas(alpha, params, cfg: RunConfig, seed: int, n: int) -> np.ndarray:
    """Depth estimates of n oracle draws (hard mode), shared stream per call."""
    from .oracle import transmit
    batch = np.stack([transmit(alpha, params, cfg.oracle, derive_seed(seed, i))
                      for i in range(n)])
    ests = estimate_depth_batch(alpha, batch, cfg.camera, mode="hard")
    return np.array([e.delta for e in ests])


def cmd_render(args) -> int:
    ds = dataset_io.read_dataset(args.input)
    rows = ds.batches.reshape(-1, ds.L)
    render.write_pgm(args.out, rows)
    print(f"wrote {args.out}: {rows.shape[0]} rows x {ds.L} columns")
    return 0


def cmd_inspect(args) -> int:
    with open(args.input, "rb") as f:
        blob = f.read()
    magic = blob[:4]
    if magic == dataset_io.MAGIC:
        ds = dataset_io.deserialize_dataset(blob)
        print(f"LCD1 dataset: L={ds.L} groups={ds.n_groups} reps={ds.reps} "
              f"base_seed={ds.base_seed}")
        print(f"oracle digest {ds.oracle_digest.hex()}")
    elif magic == checkpoint_io.MAGIC:
        ckpt = checkpoint_io.deserialize_checkpoint(blob)
        n_weights = len(ckpt.g_weights) + len(ckpt.d_weights)
        print(f"LCK1 checkpoint: L={ckpt.L} z_dim={ckpt.z_dim} "
              f"iteration={ckpt.iteration} weight tensors={n_weights}")
        print(f"dataset digest {ckpt.dataset_digest.hex()}")
    elif magic[:2] == b"P5":
        print("PGM raster: " + blob[:32].decode(errors="replace").split("255")[0].strip())
    else:
        raise FormatError(f"unrecognized file magic {magic!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidarcal",
                                description="coded-pulse camera forward model and calibration")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, out=True):
        if config:
            sp.add_argument("--config", required=True, help="run configuration file")
        if out:
            sp.add_argument("--out", required=True, help="output path")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed for this command")
        sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(sp)
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train", help="train the forward model")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--resume", default=None, help="checkpoint to resume from")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("optimize", help="optimize camera parameters through the model")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(fn=cmd_optimize)

    sp = sub.add_parser("eval", help="closed-loop before/after evaluation")
    common(sp)
    sp.add_argument("--params", required=True, help="optimized params record")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("render", help="render a dataset as a PGM raster")
    common(sp, config=False)
    sp.add_argument("--input", required=True)
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("inspect", help="print any artifact file's header")
    common(sp, config=False, out=False)
    sp.add_argument("input")
    sp.set_defaults(fn=cmd_inspect)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, FormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
