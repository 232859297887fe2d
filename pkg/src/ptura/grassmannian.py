"""Structured (cube-split style) Grassmannian modulation and soft demodulation.

A segment symbol has length ``T`` and norm ``sqrt(T)``. One real positive
reference entry sits at a position chosen by the leading ``pos_bits`` bits;
every other coordinate carries two Gray-coded PAM halves, mapped through the
standard normal quantile onto a ratio ``t_i`` with ``|t_i| < 1``.

Internally everything works on batches: bits ``(n, n_bits)``, symbols
``(n, T)``. The single-vector functions wrap the batch kernels.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from ._validation import check_bits
from .config import SegmentAllocation

T_HAT_MAX = 1.0 - 1e-9
E_MIN, E_MAX = 1e-6, 1.0 - 1e-6
MAX_ORACLE_BITS = 16


class DegenerateInputError(ValueError):
    """Zero (or non-finite) estimate handed to a demodulator."""


@dataclass(frozen=True)
class GrassmannSymbol:
    coords: np.ndarray
    ref_index: int


@dataclass(frozen=True)
class SoftSymbolEstimate:
    x_hat: np.ndarray
    e: float


def _bits_to_int(bits):
    # MSB first; bits (..., b) -> (...)
    b = bits.shape[-1]
    if b == 0:
        return np.zeros(bits.shape[:-1], dtype=np.int64)
    weights = 1 << np.arange(b - 1, -1, -1, dtype=np.int64)
    return bits.astype(np.int64) @ weights


def _int_to_bits(values, b):
    shifts = np.arange(b - 1, -1, -1, dtype=np.int64)
    return ((np.asarray(values, dtype=np.int64)[..., None] >> shifts) & 1).astype(np.uint8)


def gray_encode(j):
    j = np.asarray(j, dtype=np.int64)
    return j ^ (j >> 1)


def gray_decode(g):
    g = np.asarray(g, dtype=np.int64)
    j = g.copy()
    shift = g >> 1
    while np.any(shift):
        j ^= shift
        shift >>= 1
    return j


def _nonref_index(ref, T):
    # (n,) -> (n, T-1): coordinate indices in ascending order, skipping the reference
    idx = np.arange(T - 1)[None, :]
    return idx + (idx >= np.asarray(ref)[:, None])


def _omega_to_t(omega):
    mag2 = np.abs(omega) ** 2
    t_mag = np.sqrt(np.tanh(mag2 / 4.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(mag2 > 0, omega / np.sqrt(mag2), 0.0)
    return t_mag * unit


def _t_to_omega(t):
    mag = np.minimum(np.abs(t), T_HAT_MAX)
    w_mag = np.sqrt(4.0 * np.arctanh(mag ** 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(mag > 0, t / np.abs(t), 0.0)
    return w_mag * unit


def _levels_to_halves(levels, half_bits):
    # levels (n, 2T-2) zero-based PAM index per half -> quantile components
    a = (2.0 * levels + 1.0) / np.exp2(np.asarray(half_bits) + 1.0)
    return ndtri(a)


def _halves_to_levels(components, half_bits):
    n_levels = 1 << np.asarray(half_bits, dtype=np.int64)
    j = np.floor(ndtr(components) * n_levels).astype(np.int64)
    return np.clip(j, 0, n_levels - 1)


def _unpack(bits, seg):
    """Split a bit batch into reference index and per-half PAM level."""
    ref = _bits_to_int(bits[:, :seg.pos_bits])
    levels = np.empty((bits.shape[0], len(seg.half_bits)), dtype=np.int64)
    for g, (off, b) in enumerate(zip(seg.offsets, seg.half_bits)):
        levels[:, g] = gray_decode(_bits_to_int(bits[:, off:off + b]))
    return ref, levels


def _pack(ref, levels, seg):
    n = ref.shape[0]
    bits = np.empty((n, seg.n_bits), dtype=np.uint8)
    bits[:, :seg.pos_bits] = _int_to_bits(ref, seg.pos_bits)
    for g, (off, b) in enumerate(zip(seg.offsets, seg.half_bits)):
        bits[:, off:off + b] = _int_to_bits(gray_encode(levels[:, g]), b)
    return bits


def _assemble(ref, levels, seg):
    comps = _levels_to_halves(levels, seg.half_bits)
    omega = comps[:, 0::2] + 1j * comps[:, 1::2]
    t = _omega_to_t(omega)
    scale = np.sqrt(seg.T / (1.0 + np.sum(np.abs(t) ** 2, axis=1)))
    n = ref.shape[0]
    x = np.empty((n, seg.T), dtype=np.complex128)
    rows = np.arange(n)
    x[rows, ref] = scale
    x[rows[:, None], _nonref_index(ref, seg.T)] = scale[:, None] * t
    return x


def modulate_batch(bits, seg: SegmentAllocation):
    """Map ``(n, n_bits)`` bit rows to ``(n, T)`` symbols."""
    bits = check_bits(np.atleast_2d(bits), seg.n_bits)
    ref, levels = _unpack(bits, seg)
    return _assemble(ref, levels, seg)


def modulate_segment(bits, seg: SegmentAllocation) -> GrassmannSymbol:
    bits = check_bits(bits, seg.n_bits)
    ref, levels = _unpack(bits[None, :], seg)
    return GrassmannSymbol(coords=_assemble(ref, levels, seg)[0], ref_index=int(ref[0]))


def _check_estimates(x_hat, T):
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=np.complex128))
    if x_hat.shape[1] != T:
        raise ValueError(f"estimate length {x_hat.shape[1]} differs from T={T}")
    norms = np.linalg.norm(x_hat, axis=1)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0):
        raise DegenerateInputError("estimate must be non-zero and finite")
    return x_hat


def _levels_given_ref(x_hat, ref, seg):
    rows = np.arange(x_hat.shape[0])
    anchor = x_hat[rows, ref]
    with np.errstate(invalid="ignore", divide="ignore"):
        t_hat = x_hat[rows[:, None], _nonref_index(ref, seg.T)] / anchor[:, None]
    t_hat = np.nan_to_num(t_hat)
    omega = _t_to_omega(t_hat)
    comps = np.empty((x_hat.shape[0], 2 * (seg.T - 1)))
    comps[:, 0::2], comps[:, 1::2] = omega.real, omega.imag
    return _halves_to_levels(comps, seg.half_bits)


def demodulate_batch(x_hat, seg: SegmentAllocation, search_all_positions=False, ref=None):
    """Greedy hard demodulation of ``(n, T)`` estimates.

    The reference is the largest-magnitude allowed coordinate unless ``ref``
    forces it. With ``search_all_positions`` every allowed reference is tried
    and the symbol with the largest ``|x_hat^H x|`` wins.

    Returns ``(bits, symbols)``.
    """
    x_hat = _check_estimates(x_hat, seg.T)
    n = x_hat.shape[0]
    if ref is not None:
        refs = np.broadcast_to(np.asarray(ref, dtype=np.int64), (n,)).copy()
    elif search_all_positions:
        best_bits, best_x, best_c = None, None, np.full(n, -np.inf)
        for r in range(seg.n_positions):
            bits, x = demodulate_batch(x_hat, seg, ref=np.full(n, r))
            c = np.abs(np.sum(x_hat.conj() * x, axis=1))
            better = c > best_c
            if best_bits is None:
                best_bits, best_x = bits, x
            best_bits[better], best_x[better], best_c[better] = bits[better], x[better], c[better]
        return best_bits, best_x
    else:
        refs = np.argmax(np.abs(x_hat[:, :seg.n_positions]), axis=1)
    levels = _levels_given_ref(x_hat, refs, seg)
    return _pack(refs, levels, seg), _assemble(refs, levels, seg)


def greedy_demodulate(x_hat, seg: SegmentAllocation, search_all_positions=False):
    bits, x = demodulate_batch(x_hat, seg, search_all_positions)
    ref = int(_bits_to_int(bits[:, :seg.pos_bits])[0])
    return bits[0], GrassmannSymbol(coords=x[0], ref_index=ref)


def _neighbor_bits(bits_ml, seg, x_hat):
    """Bit rows of the nearest symbol disagreeing with the ML decision in bit i, for every i."""
    n_bits = seg.n_bits
    nb = np.repeat(bits_ml[None, :], n_bits, axis=0)
    ref, levels = _unpack(bits_ml[None, :], seg)
    ref, levels = int(ref[0]), levels[0]
    # position bits: flip one reference bit, re-demodulate the payload around the new reference
    if seg.pos_bits:
        flips = ref ^ (1 << np.arange(seg.pos_bits - 1, -1, -1))
        pos_bits, _ = demodulate_batch(np.repeat(x_hat[None, :], seg.pos_bits, axis=0), seg, ref=flips)
        nb[:seg.pos_bits] = pos_bits
    # payload bits: move the owning half to the closest level carrying the opposite bit
    for g, (off, b) in enumerate(zip(seg.offsets, seg.half_bits)):
        if b == 0:
            continue
        j = levels[g]
        all_j = np.arange(1 << b)
        codes = _int_to_bits(gray_encode(all_j), b)
        dist = np.abs(all_j - j)
        for o in range(b):
            want = 1 - bits_ml[off + o]
            ok = codes[:, o] == want
            d = np.where(ok, dist, np.iinfo(np.int64).max)
            cands = np.flatnonzero(d == d.min())
            rows = np.repeat(bits_ml[None, :], cands.size, axis=0)
            rows[:, off:off + b] = codes[cands]
            if cands.size > 1:
                x = modulate_batch(rows, seg)
                rows = rows[[int(np.argmax(np.abs(x @ x_hat.conj())))]]
            nb[off + o] = rows[0]
    return nb


def neighbor_symbol(x_ml: GrassmannSymbol, bits_ml, i, q, seg: SegmentAllocation, x_hat=None):
    """Nearest symbol to ``x_ml`` whose bit ``i`` equals ``q``.

    Payload bits only move the owning half-coordinate; reference-position bits
    flip the reference index and re-read the payload from ``x_hat`` (defaults
    to ``x_ml``) under that hypothesis.
    """
    bits_ml = check_bits(bits_ml, seg.n_bits)
    if bits_ml[i] == q:
        raise ValueError("bit already has the requested value")
    x_hat = x_ml.coords if x_hat is None else np.asarray(x_hat, dtype=np.complex128)
    bits = _neighbor_bits(bits_ml, seg, x_hat)[i]
    return modulate_segment(bits, seg), bits


def _clamp_e(e):
    return float(np.clip(e, E_MIN, E_MAX))


def llr_scale(e):
    e = _clamp_e(e)
    return 2.0 * np.sqrt(1.0 - e) / e


def soft_llr(x_hat, e, seg: SegmentAllocation, search_all_positions=False):
    """Max-log LLRs ``ln P(b_i = 1) / P(b_i = 0)`` for one segment (positive favours 1)."""
    if isinstance(x_hat, SoftSymbolEstimate):
        x_hat, e = x_hat.x_hat, x_hat.e
    x_hat = _check_estimates(x_hat, seg.T)[0]
    bits_ml, x_ml = demodulate_batch(x_hat, seg, search_all_positions)
    bits_ml, x_ml = bits_ml[0], x_ml[0]
    if seg.n_bits == 0:
        return np.zeros(0)
    nb = _neighbor_bits(bits_ml, seg, x_hat)
    x_nb = modulate_batch(nb, seg)
    c_ml = np.abs(np.vdot(x_hat, x_ml))
    c_nb = np.abs(x_nb @ x_hat.conj())
    sign = np.where(bits_ml == 1, 1.0, -1.0)
    return llr_scale(e) * sign * (c_ml - c_nb)


def constellation(seg: SegmentAllocation):
    """Every (bits, symbol) pair of a small segment."""
    if seg.n_bits > MAX_ORACLE_BITS:
        raise OverflowError(f"{seg.n_bits} bits is too many to enumerate")
    bits = _int_to_bits(np.arange(1 << seg.n_bits), seg.n_bits)
    return bits, modulate_batch(bits, seg)


def exact_llr_oracle(x_hat, e, seg: SegmentAllocation):
    """Brute-force log-sum-exp LLR over the whole constellation (test oracle)."""
    if isinstance(x_hat, SoftSymbolEstimate):
        x_hat, e = x_hat.x_hat, x_hat.e
    bits, X = constellation(seg)
    x_hat = _check_estimates(x_hat, seg.T)[0]
    metric = llr_scale(e) * np.abs(X @ x_hat.conj())
    one = bits.astype(bool)
    num = logsumexp(np.where(one, metric[:, None], -np.inf), axis=0)
    den = logsumexp(np.where(~one, metric[:, None], -np.inf), axis=0)
    return num - den
