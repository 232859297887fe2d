"""CRC-11 and a CRC-aided SCL polar codec for the (126, 107) shortened code.

Bit arrays are uint8 0/1 vectors, most significant bit first. LLRs given to
the decoder follow ``llr > 0  =>  bit 0 more likely``.
"""
from functools import lru_cache

import numpy as np

from ._validation import check_bits

# D^11 + D^10 + D^9 + D^5 + 1, coefficients from D^11 down to D^0
CRC11_POLY = np.array([1, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1], dtype=np.uint8)
CRC_LEN = 11

MESSAGE_BITS = 96
CRC_CODEWORD_BITS = 107
POLAR_CODEWORD_BITS = 126

# Universal reliability sequence restricted to N = 128, least reliable first.
RELIABILITY_128 = np.array([
    0, 1, 2, 4, 8, 16, 32, 3, 5, 64, 9, 6, 17, 10, 18, 12, 33, 65, 20, 34, 24, 36, 7, 66,
    11, 40, 68, 19, 13, 48, 14, 72, 21, 35, 26, 80, 37, 25, 22, 38, 96, 67, 41, 28, 69, 42,
    49, 74, 70, 44, 81, 50, 73, 15, 52, 23, 76, 82, 56, 27, 97, 39, 84, 29, 43, 98, 88, 30,
    71, 45, 100, 51, 46, 75, 104, 53, 77, 54, 83, 57, 112, 78, 85, 58, 99, 86, 60, 89, 101,
    31, 90, 102, 105, 92, 47, 106, 55, 113, 79, 108, 59, 114, 87, 116, 61, 91, 120, 62, 103,
    93, 107, 94, 109, 115, 110, 117, 118, 121, 122, 63, 124, 95, 111, 119, 123, 125, 126, 127,
])

# LLR pinned on shortened positions; finite so min-sum and path metrics stay NaN-free.
_KNOWN_BIT_LLR = 1e9


def crc_remainder(bits, poly=CRC11_POLY):
    """Long-division remainder of ``bits(D) * D^deg`` modulo ``poly``."""
    deg = len(poly) - 1
    reg = np.concatenate([np.asarray(bits, dtype=np.uint8), np.zeros(deg, np.uint8)])
    for i in range(len(bits)):
        if reg[i]:
            reg[i:i + deg + 1] ^= poly
    return reg[-deg:]


@lru_cache(maxsize=None)
def _parity_matrix(n_bits):
    # row i = CRC of the unit vector e_i; CRC is linear (zero init, no final xor)
    eye = np.eye(n_bits, dtype=np.uint8)
    return np.array([crc_remainder(row) for row in eye], dtype=np.uint8)


def crc_encode(msg, n_bits=MESSAGE_BITS):
    """Append the 11 CRC bits; works row-wise on 2-D input."""
    msg = check_bits(msg, n_bits, "message")
    parity = (msg.astype(np.int64) @ _parity_matrix(n_bits)) & 1
    return np.concatenate([msg, parity.astype(np.uint8)], axis=-1)


def crc_check(bits, n_bits=CRC_CODEWORD_BITS):
    """True where the codeword remainder is zero (row-wise on 2-D input)."""
    bits = check_bits(bits, n_bits, "CRC codeword")
    msg, parity = bits[..., :-CRC_LEN], bits[..., -CRC_LEN:]
    expected = (msg.astype(np.int64) @ _parity_matrix(n_bits - CRC_LEN)) & 1
    ok = np.all(expected == parity, axis=-1)
    return bool(ok) if ok.ndim == 0 else ok


def polar_transform(u):
    """``x = u F^{(x)n}`` over GF(2) with ``F = [[1, 0], [1, 1]]``, natural order."""
    x = np.array(u, dtype=np.uint8, copy=True)
    n = x.shape[-1]
    lead = x.shape[:-1]
    step = 1
    while step < n:
        v = x.reshape(lead + (-1, 2, step))
        v[..., 0, :] ^= v[..., 1, :]
        step *= 2
    return x


def _f(a, b):
    return np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))


class PolarCode:
    """Shortened polar code built from a length ``N = 2**n`` mother code.

    The last ``N - n_coded`` natural-order outputs are shortened; their
    transform inputs are frozen, which forces those outputs to zero.
    """

    def __init__(self, n_info=CRC_CODEWORD_BITS, n_coded=POLAR_CODEWORD_BITS, N=128):
        if not n_info < n_coded <= N or N & (N - 1):
            raise ValueError("need n_info < n_coded <= N with N a power of two")
        if N != 128:
            raise ValueError("only the N=128 reliability order is bundled")
        self.n_info, self.n_coded, self.N = n_info, n_coded, N
        self.shortened = np.arange(n_coded, N)
        usable = [i for i in RELIABILITY_128 if i not in set(self.shortened)]
        self.info_set = np.sort(np.array(usable[-n_info:]))
        self.frozen = np.ones(N, dtype=bool)
        self.frozen[self.info_set] = False

    def encode(self, cw):
        cw = check_bits(cw, self.n_info, "CRC codeword")
        u = np.zeros(cw.shape[:-1] + (self.N,), dtype=np.uint8)
        u[..., self.info_set] = cw
        return polar_transform(u)[..., :self.n_coded]

    def decode_list(self, llr, n_list):
        """SCL decoding; returns candidate info vectors sorted by path metric (best first)."""
        llr = np.asarray(llr, dtype=float)
        if llr.shape != (self.n_coded,):
            raise ValueError(f"expected {self.n_coded} LLRs, got shape {llr.shape}")
        if n_list < 1:
            raise ValueError("n_list must be >= 1")
        full = np.full(self.N, _KNOWN_BIT_LLR)
        full[:self.n_coded] = np.nan_to_num(llr, nan=0.0, posinf=_KNOWN_BIT_LLR, neginf=-_KNOWN_BIT_LLR)
        dec = _SCLDecoder(self.frozen, n_list)
        u, pm = dec.run(full)
        order = np.argsort(pm, kind="stable")
        return u[order][:, self.info_set], pm[order]


class _SCLDecoder:
    """LLR-domain list decoder; single use per call."""

    def __init__(self, frozen, n_list):
        self.frozen = frozen
        self.n_list = n_list
        self.N = frozen.size

    def run(self, llr):
        self.pm = np.zeros(1)
        self.u = np.zeros((1, self.N), dtype=np.uint8)
        self._node(llr[None, :], 0)
        return self.u, self.pm

    def _node(self, alpha, start):
        """Decode the subtree whose leaves are ``u[start:start+n]``.

        Returns (beta, perm): partial sums per surviving path and, for every
        surviving path, the index of the path it descends from on entry.
        """
        n = alpha.shape[1]
        if n == 1:
            return self._leaf(alpha[:, 0], start)
        h = n // 2
        if self.frozen[start:start + n].all():
            # all-frozen subtree: decisions are forced, only metrics move
            perm = np.arange(alpha.shape[0])
            self._frozen_block(alpha, start)
            return np.zeros_like(alpha, dtype=np.uint8), perm
        a1, a2 = alpha[:, :h], alpha[:, h:]
        b1, p1 = self._node(_f(a1, a2), start)
        a1, a2 = a1[p1], a2[p1]
        b2, p2 = self._node(a2 + (1.0 - 2.0 * b1) * a1, start + h)
        b1 = b1[p2]
        return np.concatenate([b1 ^ b2, b2], axis=1), p1[p2]

    def _frozen_block(self, alpha, start):
        # replay the SC recursion with zero decisions to accumulate exact leaf metrics
        n = alpha.shape[1]
        if n == 1:
            self.pm = self.pm + np.logaddexp(0.0, -alpha[:, 0])
            return
        h = n // 2
        a1, a2 = alpha[:, :h], alpha[:, h:]
        self._frozen_block(_f(a1, a2), start)
        self._frozen_block(a2 + a1, start + h)

    def _leaf(self, a, i):
        n_paths = a.shape[0]
        if self.frozen[i]:
            self.pm = self.pm + np.logaddexp(0.0, -a)
            return np.zeros((n_paths, 1), dtype=np.uint8), np.arange(n_paths)
        # candidates ordered (path0,u=0), (path0,u=1), (path1,u=0), ...
        cand = np.stack([self.pm + np.logaddexp(0.0, -a), self.pm + np.logaddexp(0.0, a)], axis=1).ravel()
        keep = np.argsort(cand, kind="stable")[:min(cand.size, self.n_list)]
        parent, bit = keep // 2, (keep % 2).astype(np.uint8)
        self.pm = cand[keep]
        self.u = self.u[parent]
        self.u[:, i] = bit
        return bit[:, None], parent


@lru_cache(maxsize=None)
def default_code():
    return PolarCode()


@lru_cache(maxsize=None)
def _code(n_info, n_coded):
    return PolarCode(n_info, n_coded)


def code_for(config):
    """Polar code matching ``config.B_c`` and ``config.B_p``."""
    return _code(config.B_c, config.B_p)


def polar_encode(cw, code=None):
    return (code or default_code()).encode(cw)


def polar_decode_scl(llr, n_list=8, code=None):
    """CRC-aided SCL decoding.

    Returns the message (CRC stripped) of the best-metric list path whose
    CRC checks, or ``None`` when no path passes.
    """
    code = code or default_code()
    candidates, _ = code.decode_list(llr, n_list)
    ok = crc_check(candidates, code.n_info)
    hits = np.flatnonzero(np.atleast_1d(ok))
    if hits.size == 0:
        return None
    return candidates[hits[0], :-CRC_LEN].copy()


def encode_message(msg, code=None):
    """Message -> CRC codeword -> polar codeword (row-wise)."""
    code = code or default_code()
    return code.encode(crc_encode(msg, code.n_info - CRC_LEN))
