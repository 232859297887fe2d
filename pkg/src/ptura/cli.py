"""Command-line front end: ``ptura run | decompose | presets``."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import PRESET_NAMES, ConfigError, describe, preset, resolve
from .gmbtd import GMBTD
from .simulator import (derotate, format_rows, generate_scene, reer, rnmse, run_trials,
                        stack_segments)
from .tensor_io import read_tensor

THREADS_ENV = "PTURA_THREADS"
_MODES = {"ibrfb": "ibr_fb", "br": "br", "gmbtd": "gmbtd_only"}


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    tmp = os.path.join(directory, f".{os.path.basename(path)}.{os.getpid()}.tmp")
    try:
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _emit(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        _atomic_write(path, text)


def _default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _config(args):
    return resolve(args.preset, args.config)


def cmd_run(args):
    cfg = _config(args)
    mode = _MODES[args.mode]
    results, traces = [], []
    combos = [(ka, eb) for ka in args.ka for eb in args.ebn0]
    for i, (ka, eb) in enumerate(combos, 1):
        batch = run_trials(cfg, ka, eb, args.trials, args.seed, mode, n_jobs=args.threads,
                           keep_trace=bool(args.trace))
        results.extend(batch)
        if args.trace:
            for r in batch:
                traces.append(json.dumps(dict(trial_index=r.trial_index, K_a=ka, ebn0_db=eb, seed=r.seed,
                                              rounds=r.history, vb_trace=r.trace), default=_json_default))
        print(f"[{i}/{len(combos)}] K_a={ka} ebn0={eb:g} dB: {len(batch)} trials", file=sys.stderr)
    _emit(args.out, format_rows(results))
    if args.trace:
        _atomic_write(args.trace, "\n".join(traces) + "\n")
    return 0


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def cmd_decompose(args):
    cfg = _config(args)
    truth = None
    if args.input:
        Y = read_tensor(args.input)
        if Y.shape != cfg.shape:
            raise ConfigError(f"tensor shape {Y.shape} does not match the configuration {cfg.shape}")
    else:
        ka, eb = args.ka[0], args.ebn0[0]
        scene_ss, rx_ss = np.random.SeedSequence(args.seed).spawn(2)
        scene = generate_scene(cfg, ka, eb, np.random.default_rng(scene_ss))
        Y, truth = scene.Y, scene
    model = GMBTD.from_config(cfg, random_state=args.seed).fit(Y)
    summary = dict(K_u_hat=model.n_components_, vb_iters=model.n_iter_,
                   noise_variance=1.0 / model.noise_precision_)
    if truth is not None and truth.K_a:
        summary["rnmse"] = rnmse(stack_segments(truth.symbols), stack_segments(derotate(model.factors_, cfg)))
        summary["reer"] = reer(truth.K_a, model.n_components_)
    _emit(args.out, json.dumps(summary, default=_json_default, sort_keys=True) + "\n")
    if args.trace:
        lines = ["iteration,K,residual,n0_inv"]
        lines += [f"{t['iteration']},{t['K']},{t['residual']:.9g},{t['n0_inv']:.9g}" for t in model.trace_]
        _atomic_write(args.trace, "\n".join(lines) + "\n")
    return 0


def cmd_presets(args):
    for name in PRESET_NAMES:
        cfg = preset(name)
        print(describe(cfg))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ptura", description="Polar-coded tensor random access simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--preset", default=None, help="3ptura, 4ptura or 5ptura (default 3ptura)")
        g.add_argument("--config", default=None, help="JSON configuration file")
        sp.add_argument("--ka", type=int, action="append", help="active devices (repeatable)")
        sp.add_argument("--ebn0", type=float, action="append", help="Eb/N0 in dB (repeatable)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None, help="output file (default stdout)")
        sp.add_argument("--trace", default=None, help="write per-iteration / per-round trace here")

    r = sub.add_parser("run", help="Monte Carlo sweep, one CSV row per trial")
    common(r)
    r.add_argument("--mode", choices=sorted(_MODES), default="ibrfb")
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--threads", type=int, default=None,
                   help=f"worker processes (default ${THREADS_ENV} or 1)")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("decompose", help="GM-BTD on one synthetic scene or tensor file")
    common(d)
    d.add_argument("--input", default=None, help="tensor file to decompose instead of a synthetic scene")
    d.set_defaults(func=cmd_decompose)

    s = sub.add_parser("presets", help="list the built-in configurations")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("run", "decompose"):
        args.ka = args.ka or [50]
        args.ebn0 = args.ebn0 or [0.0]
        if any(k < 0 for k in args.ka):
            parser.error("--ka must be non-negative")
    if args.command == "run":
        if args.trials < 1:
            parser.error("--trials must be >= 1")
        if args.threads is None:
            args.threads = _default_threads()
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"ptura: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
