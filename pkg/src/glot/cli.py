"""Command-line entry point: ``glot <command> [options]``.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import PRESETS, build_config, dump_flat, parse_overrides
from .data import generate_dataset, read_dataset, read_sequence, window_indices, write_dataset
from .errors import ConfigMismatch, CorruptFile, GlotError, NaNLoss, VersionMismatch
from .evaluate import (evaluate_trajectories, oracle_trajectory, predict_dataset, predict_sequence,
                       read_trajectories, write_trajectories)
from .model import GLoT, count_params_closed_form, load_checkpoint

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("glot")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args, default_preset="desk"):
    overrides = parse_overrides(args.set or [])
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return build_config(args.preset or default_preset, args.config, overrides)


def _echo_config(cfg, out: Path | None) -> None:
    text = dump_flat(cfg)
    print("# effective config")
    print(text, end="")
    if out is not None:
        (out / "config.txt").write_text(text)


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    dtype = {"float32": np.float32, "float64": np.float64}[args.dtype]
    seed = 0 if args.seed is None else args.seed
    ds = generate_dataset(seed, args.count, L=args.length, noise_level=args.noise,
                          feature_dim=args.feature_dim, feature_seed=args.feature_seed,
                          n_vertices=args.vertices, body_seed=args.body_seed, dtype=dtype)
    write_dataset(args.out, ds)
    print(f"wrote {args.count} sequences of length {args.length} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .plotting import plot_training_log
    from .train import train

    cfg = _config(args)
    out = _out_dir(args)
    _echo_config(cfg, out)
    ds = read_dataset(args.data)
    t0 = time.time()
    try:
        res = train(cfg, ds, out_dir=out)
    except NaNLoss as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    plot_training_log(res.log, out / "loss_curve.png")
    last = res.log[-1] if res.log else {}
    print(f"trained {cfg.steps} steps in {time.time() - t0:.1f}s; final loss {last.get('total', float('nan')):.5f}")
    print(f"checkpoint: {res.checkpoint}")
    return EXIT_OK


def _write_report(report, out: Path, stem: str = "report") -> None:
    from .plotting import plot_per_frame

    (out / f"{stem}.txt").write_text(report.to_text())
    (out / f"{stem}.json").write_text(report.to_json())
    if report.per_frame:
        plot_per_frame(report.per_frame, out / f"{stem}_per_frame.png")


def cmd_eval(args) -> int:
    ds = read_dataset(args.data)
    if args.oracle:
        trajs = [oracle_trajectory(s) for s in ds.sequences]
    elif args.trajectories:
        trajs = read_trajectories(args.trajectories)
    elif args.checkpoint:
        model, body, _ = load_checkpoint(args.checkpoint)
        trajs = predict_dataset(model, body, ds)
    else:
        raise UsageError("eval needs --checkpoint, --trajectories or --oracle")
    report = evaluate_trajectories(trajs, ds.sequences, args.fps)
    print(report.to_text(), end="")
    if args.out:
        out = _out_dir(args)
        _write_report(report, out)
        if args.save_trajectories:
            write_trajectories(out / "trajectories", trajs)
    return EXIT_OK


def cmd_infer(args) -> int:
    from .plotting import plot_trajectory

    model, body, _ = load_checkpoint(args.checkpoint)
    seq = read_sequence(args.sequence)
    if seq.features.shape[1] != model.cfg.feature_dim:
        raise ConfigMismatch(f"sequence has {seq.features.shape[1]}-d features, model expects "
                             f"{model.cfg.feature_dim}")
    traj = predict_sequence(model, body, seq)
    out = _out_dir(args)
    path = write_trajectories(out, [traj])[0]
    plot_trajectory(traj["pred_joints3d"], np.asarray(seq.gt_joints3d), out / "trajectory.png")
    print(f"wrote {seq.length}-frame trajectory to {path}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .checks import detach_isolation, run_grad_check

    seed = 0 if args.seed is None else args.seed
    t0 = time.time()
    report = run_grad_check(seed, eps=args.eps, rtol=args.rtol, max_entries=args.max_entries,
                            n_directions=args.directions)
    iso = detach_isolation(seed)
    text = report.to_text()
    text += (f"detach isolation: max |grad| on global-estimate parameters from the local loss "
             f"= {iso['detached']:.3e} detached, {iso['attached']:.3e} attached\n")
    ok = report.passed and iso["detached"] == 0.0 and iso["attached"] > 0.0
    text += f"{'PASS' if ok else 'FAIL'} in {time.time() - t0:.1f}s\n"
    print(text, end="")
    if args.out:
        out = _out_dir(args)
        (out / "grad_check.txt").write_text(text)
        (out / "grad_check.json").write_text(json.dumps(
            {"per_param": report.per_param, "max_rel_err": report.max_rel_err, "rtol": report.rtol,
             "detach_isolation": iso, "passed": ok}, indent=1))
    return EXIT_OK if ok else EXIT_VERIFY


def _parse_values(raw: str):
    out = []
    for v in raw.split(","):
        v = v.strip()
        if not v:
            continue
        try:
            out.append(json.loads(v.lower()) if v.lower() in ("true", "false") else json.loads(v))
        except json.JSONDecodeError:
            out.append(v)
    if not out:
        raise UsageError("--values is empty")
    return out


def cmd_sweep(args) -> int:
    from .plotting import plot_sweep
    from .sweep import run_sweep

    cfg = _config(args)
    out = _out_dir(args)
    _echo_config(cfg, out)
    if args.data:
        ds = read_dataset(args.data)
        if len(ds.sequences) < 2:
            raise UsageError("sweep needs at least two sequences to split")
        n_test = args.test_count
        train_set = type(ds)(ds.body, ds.sequences[:-n_test], ds.meta)
        test_set = type(ds)(ds.body, ds.sequences[-n_test:], ds.meta)
    else:
        data_seed = 0 if args.seed is None else args.seed
        full = generate_dataset(data_seed, args.train_count + args.test_count, L=args.length,
                                feature_dim=cfg.model.feature_dim)
        train_set = type(full)(full.body, full.sequences[:args.train_count], full.meta)
        test_set = type(full)(full.body, full.sequences[args.train_count:], full.meta)
    seeds = [int(s) for s in args.seeds.split(",")]
    result = run_sweep(cfg, args.axis, _parse_values(args.values), train_set, test_set, seeds,
                       progress=print)
    print(result.to_text(), end="")
    (out / "sweep.txt").write_text(result.to_text())
    (out / "sweep.json").write_text(result.to_json())
    plot_sweep(result, out / "sweep.png")
    return EXIT_OK


def _stochastic(maps: dict, tol: float = 1e-6) -> bool:
    for layers in maps.values():
        for w in layers:
            w = np.asarray(w)
            if np.any(w < 0) or np.max(np.abs(w.sum(-1) - 1.0)) > tol:
                return False
    return True


def cmd_dump_attn(args) -> int:
    from .plotting import plot_attention

    model, body, _ = load_checkpoint(args.checkpoint)
    if args.sequence:
        seq = read_sequence(args.sequence)
    elif args.data:
        ds = read_dataset(args.data)
        if not 0 <= args.index < len(ds.sequences):
            raise UsageError(f"--index {args.index} out of range for {len(ds.sequences)} sequences")
        seq = ds.sequences[args.index]
    else:
        raise UsageError("dump-attn needs --sequence or --data")
    T = model.cfg.T
    if not 0 <= args.frame < seq.length:
        raise UsageError(f"--frame {args.frame} out of range for a {seq.length}-frame sequence")
    idx, pad_l, pad_r = window_indices(args.frame, T, seq.length)
    dtype = next(model.parameters()).dtype
    S = torch.as_tensor(np.asarray(seq.features)[idx], dtype=dtype).unsqueeze(0)
    model.eval()
    with torch.no_grad():
        pred = model(S, torch.zeros(1, T, dtype=torch.bool), torch.arange(T).unsqueeze(0))
    maps = {k: [w[0].double().numpy() for w in v] for k, v in pred.attention().items()}
    doc = {"frame": args.frame, "window_frames": [int(i) for i in idx], "pad_left": pad_l,
           "pad_right": pad_r,
           "attention": {k: [w.tolist() for w in v] for k, v in maps.items()},
           "shapes": {k: [list(w.shape) for w in v] for k, v in maps.items()}}
    out = _out_dir(args)
    (out / "attention.json").write_text(json.dumps(doc))
    plot_attention(maps, out / "attention.png")
    ok = _stochastic(maps)
    print(f"wrote attention maps for frame {args.frame}: "
          + ", ".join(f"{k} {len(v)} layer(s)" for k, v in maps.items()))
    print("row-stochastic: " + ("yes" if ok else "NO"))
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_param_count(args) -> int:
    if args.config or args.set or args.preset:
        configs = {"custom" if (args.config or args.set) else args.preset: _config(args)}
    else:
        configs = {name: PRESETS[name]() for name in ("desk", "full")}
    ok = True
    doc = {}
    for name, cfg in configs.items():
        closed = count_params_closed_form(cfg.model)
        store = GLoT(cfg.model).store()
        enum = store.section_counts()
        match = dict(closed) == dict(enum)
        ok &= match
        doc[name] = {"closed_form": dict(closed), "enumerated": dict(enum),
                     "total_closed_form": sum(closed.values()), "total_enumerated": store.count(),
                     "match": match}
        print(f"[{name}]")
        for sec in closed:
            print(f"  {sec:6s} closed-form {closed[sec]:>12,d}  enumerated {enum.get(sec, 0):>12,d}")
        print(f"  total  closed-form {sum(closed.values()):>12,d}  enumerated {store.count():>12,d}"
              f"  {'match' if match else 'MISMATCH'}")
    if args.out:
        out = _out_dir(args)
        (out / "param_count.json").write_text(json.dumps(doc, indent=1))
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="glot", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"glot {__version__}")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def cfg_flags(sp, preset_default=None):
        sp.add_argument("--config", help="flat key=value or JSON config file")
        sp.add_argument("--preset", choices=sorted(PRESETS), default=preset_default)
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--length", type=int, default=120)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--feature-dim", type=int, default=256)
    sp.add_argument("--feature-seed", type=int, default=0)
    sp.add_argument("--vertices", type=int, default=108)
    sp.add_argument("--body-seed", type=int, default=0)
    sp.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train a model on a dataset directory")
    cfg_flags(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint or exported trajectories")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--trajectories", help="directory of exported trajectory files")
    sp.add_argument("--oracle", action="store_true", help="evaluate the ground truth itself")
    sp.add_argument("--fps", type=float, help="report Accel in mm/s^2 at this frame rate")
    sp.add_argument("--save-trajectories", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer", help="predict every frame of one sequence file")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--sequence", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("grad-check", help="finite-difference check of the tiny model")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--eps", type=float, default=1e-6)
    sp.add_argument("--rtol", type=float, default=1e-3)
    sp.add_argument("--max-entries", type=int, default=8)
    sp.add_argument("--directions", type=int, default=2)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("sweep", help="ablation sweep along one config axis")
    cfg_flags(sp)
    sp.add_argument("--axis", required=True)
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--seeds", default="0")
    sp.add_argument("--data", help="dataset directory; the last --test-count sequences are held out")
    sp.add_argument("--train-count", type=int, default=16)
    sp.add_argument("--test-count", type=int, default=4)
    sp.add_argument("--length", type=int, default=120)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("dump-attn", help="export attention maps for one window")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--sequence")
    sp.add_argument("--data")
    sp.add_argument("--index", type=int, default=0, help="sequence index within --data")
    sp.add_argument("--frame", type=int, default=0, help="frame whose window is dumped")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_dump_attn)

    sp = sub.add_parser("param-count", help="closed-form and enumerated parameter counts")
    cfg_flags(sp)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_param_count)
    return p


def main(argv=None) -> int:
    threads = os.environ.get("GLOT_THREADS")
    parser = build_parser()
    try:
        if threads:
            torch.set_num_threads(max(1, int(threads)))
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorruptFile, VersionMismatch, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigMismatch, KeyError, ValueError, GlotError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
