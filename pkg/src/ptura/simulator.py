"""Scene generation, link metrics and the Monte Carlo trial engine."""
from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ._validation import check_random_state
from .config import integerize_allocation
from .tensor_ops import kruskal
from .transmitter import transmit

MODES = ("ibr_fb", "br", "gmbtd_only")

CSV_COLUMNS = ("trial_index", "mode", "preset", "K_a", "ebn0_db", "seed", "K_u_hat",
               "rnmse", "reer", "pupe", "vb_iters", "fb_rounds", "wall_time_ms")


def ebn0_to_n0(config, ebn0_db):
    """Noise variance for a given ``Eb/N0`` in dB, with ``Eb/N0 = T / (B N0)``."""
    return config.T / (config.B * 10.0 ** (ebn0_db / 10.0))


@dataclass
class Scene:
    K_a: int
    messages: np.ndarray  # (K_a, B) uint8
    symbols: List[np.ndarray]  # per segment, (T_l, K_a)
    channels: np.ndarray  # (M, K_a)
    N0: float
    Y: np.ndarray
    rng_seed: Optional[int] = None

    @property
    def message_set(self):
        return {m.tobytes() for m in self.messages}


def _cgauss(rng, shape, var=1.0):
    return np.sqrt(var / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def random_messages(K_a, B, rng):
    """``K_a`` distinct uniformly drawn ``B``-bit messages."""
    if K_a > 2.0 ** B:
        raise ValueError(f"cannot draw {K_a} distinct {B}-bit messages")
    rng = check_random_state(rng)
    out = np.zeros((0, B), dtype=np.uint8)
    while out.shape[0] < K_a:
        draw = rng.integers(0, 2, size=(K_a - out.shape[0], B), dtype=np.uint8)
        out = np.unique(np.vstack([out, draw]), axis=0)
    # np.unique sorts rows; shuffle so device order carries no information
    return out[rng.permutation(K_a)] if K_a else out


def generate_scene(config, K_a, ebn0_db=None, rng=None, N0=None):
    """Draw messages, Rayleigh channels and noise; return the received tensor.

    Pass ``N0`` directly to override the ``Eb/N0`` conversion (``N0=0`` is noiseless).
    """
    if K_a < 0:
        raise ValueError("K_a must be non-negative")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = check_random_state(rng)
    if N0 is None:
        N0 = 0.0 if ebn0_db is None else ebn0_to_n0(config, ebn0_db)
    messages = random_messages(K_a, config.B, rng)
    symbols = transmit(messages, config)
    channels = _cgauss(rng, (config.M, K_a))
    Y = kruskal(symbols + [channels]).astype(np.complex128)
    if N0 > 0:
        Y = Y + _cgauss(rng, Y.shape, N0)
    return Scene(K_a=K_a, messages=messages, symbols=symbols, channels=channels,
                 N0=float(N0), Y=Y, rng_seed=seed)


def derotate(factors, config):
    """Rotate each segment column so its detected reference entry is real positive."""
    out = []
    for x, seg in zip(factors, integerize_allocation(config)):
        x = np.asarray(x, dtype=np.complex128)
        if x.shape[1] == 0:
            out.append(x.copy())
            continue
        ref = np.argmax(np.abs(x[:seg.n_positions]), axis=0)
        anchor = x[ref, np.arange(x.shape[1])]
        mag = np.abs(anchor)
        phase = np.where(mag > 0, anchor.conj() / np.where(mag > 0, mag, 1.0), 1.0)
        out.append(x * phase)
    return out


def stack_segments(factors):
    """``[(T_1, K), ..., (T_L, K)]`` -> ``(sum T_l, K)``."""
    return np.vstack([np.asarray(f) for f in factors])


def rnmse(G_true, G_hat):
    """Revised NMSE between column sets of possibly different sizes.

    Each column of the larger set is matched to its nearest column of the
    other set (not a bijection); the sum is normalised by ``||G_true||_F^2``.
    """
    G_true = np.asarray(G_true, dtype=np.complex128)
    G_hat = np.asarray(G_hat, dtype=np.complex128)
    K, K_hat = G_true.shape[1], G_hat.shape[1]
    if K == 0 or K_hat == 0:
        return 0.0 if K == K_hat else 1.0
    # direct differences, so identical columns give exactly zero
    d = np.sum(np.abs(G_hat[:, :, None] - G_true[:, None, :]) ** 2, axis=0)
    num = d.min(axis=1).sum() if K_hat >= K else d.min(axis=0).sum()
    return float(num / np.sum(np.abs(G_true) ** 2))


def reer(K_u, K_u_hat):
    if K_u < 1:
        raise ValueError("REER is undefined for K_u = 0")
    return abs(K_u_hat - K_u) / K_u


def pupe(B_true, B_hat):
    """Missed-detection fraction plus false-alarm fraction (the latter 0 for empty ``B_hat``)."""
    B_true, B_hat = _as_set(B_true), _as_set(B_hat)
    if not B_true:
        raise ValueError("PUPE needs a non-empty true message set")
    hit = len(B_true & B_hat)
    missed = (len(B_true) - hit) / len(B_true)
    false = (len(B_hat) - hit) / len(B_hat) if B_hat else 0.0
    return missed + false


def _as_set(messages):
    if isinstance(messages, (set, frozenset)):
        return set(messages)
    arr = np.asarray(messages, dtype=np.uint8)
    if arr.size == 0:
        return set()
    return {row.tobytes() for row in np.atleast_2d(arr)}


@dataclass
class TrialResult:
    trial_index: int
    mode: str
    preset: str
    K_a: int
    ebn0_db: float
    seed: int
    K_u_hat: int
    rnmse: float
    reer: float
    pupe: float
    vb_iters: int
    fb_rounds: int
    wall_time_ms: float
    history: Optional[list] = None
    trace: Optional[list] = None

    def __post_init__(self):
        if not (0.0 <= self.pupe <= 2.0 or math.isnan(self.pupe)):
            raise AssertionError(f"PUPE {self.pupe} outside [0, 2]")
        if self.rnmse < 0 or self.reer < 0:
            raise AssertionError("negative error metric")

    def row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


def _normalize_mode(mode):
    key = str(mode).lower().replace("-", "_")
    aliases = {"ibrfb": "ibr_fb", "gmbtd": "gmbtd_only"}
    key = aliases.get(key, key)
    if key not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    return key


def run_trial(config, K_a, ebn0_db, seed, mode="ibr_fb", trial_index=0, keep_trace=False):
    """One seeded trial. The scene and the receiver draw from independent child streams."""
    from .gmbtd import GMBTD
    from .receiver import IBRFBReceiver, round_seed

    mode = _normalize_mode(mode)
    scene_ss, rx_ss = np.random.SeedSequence(seed).spawn(2)
    scene = generate_scene(config, K_a, ebn0_db, np.random.default_rng(scene_ss))
    rx_seed = int(rx_ss.generate_state(1)[0])
    t0 = time.perf_counter()
    history = trace = None
    if mode == "gmbtd_only":
        # same stream as the receivers' first round
        model = GMBTD.from_config(config, random_state=round_seed(rx_seed, 0)).fit(scene.Y)
        factors, K_hat, vb_iters, rounds = model.factors_, model.n_components_, model.n_iter_, 0
        p = float("nan")
        trace = model.trace_ if keep_trace else None
    else:
        rx = IBRFBReceiver(config, feedback=(mode == "ibr_fb"), random_state=rx_seed).fit(scene.Y)
        first = rx.history_[0]
        factors, K_hat, vb_iters, rounds = first["factors"], first["K_u_hat"], first["vb_iters"], rx.rounds_
        p = pupe(scene.messages, rx.messages_) if K_a else float(len(rx.messages_) > 0)
        history = [{k: v for k, v in h.items() if k != "factors"} for h in rx.history_]
    wall = 1e3 * (time.perf_counter() - t0)
    if K_a:
        e = rnmse(stack_segments(scene.symbols), stack_segments(derotate(factors, config)))
        r = reer(K_a, K_hat)
    else:
        e = 0.0 if K_hat == 0 else 1.0
        r = float(K_hat)
    return TrialResult(trial_index, mode, config.name, int(K_a), float(ebn0_db), int(seed), int(K_hat),
                       e, r, p, int(vb_iters), int(rounds), wall, history, trace)


def _run_trial_args(args):
    return run_trial(*args)


def run_trials(config, K_a, ebn0_db, n_trials, base_seed=0, mode="ibr_fb", n_jobs=1, keep_trace=False):
    """Trials ``t = 0 .. n_trials-1`` with seed ``base_seed + t``; results in trial order.

    RNMSE and REER always describe the first (feedback-free) decomposition.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    mode = _normalize_mode(mode)
    jobs = [(config, K_a, ebn0_db, base_seed + t, mode, t, keep_trace) for t in range(n_trials)]
    if n_jobs is None or n_jobs <= 1 or n_trials == 1:
        return [_run_trial_args(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(n_jobs, n_trials)) as pool:
        return list(pool.map(_run_trial_args, jobs))


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".9g")
    return str(v)


def format_rows(results: Sequence[TrialResult], header=True):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow([_fmt(v) for v in r.row()])
    return buf.getvalue()


def write_csv(results, path, header=True):
    """Write rows atomically (temp file in the target directory, then rename)."""
    text = format_rows(results, header)
    directory = os.path.dirname(os.path.abspath(path))
    tmp = os.path.join(directory, f".{os.path.basename(path)}.{os.getpid()}.tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
