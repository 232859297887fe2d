"""Device-side pipeline: message -> CRC -> polar -> segment split -> Grassmannian symbols."""
import numpy as np

from ._validation import check_bits
from .coding import code_for, encode_message
from .config import integerize_allocation
from .grassmannian import modulate_batch


def split_codewords(codewords, config):
    """Cut ``(K, B_p)`` coded rows into ``L`` consecutive ``(K, B_p_l)`` blocks."""
    codewords = check_bits(np.atleast_2d(codewords), config.B_p, "polar codeword")
    bounds = np.cumsum((0,) + config.B_p_l)
    return [codewords[:, a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def transmit(messages, config):
    """Symbol factor matrices ``[(T_1, K), ..., (T_L, K)]`` for ``K`` messages.

    Parameters
    ----------
    messages : array_like of shape (K, B)
        One 0/1 message per row; ``K`` may be zero.
    config : SystemConfig
    """
    messages = np.asarray(messages, dtype=np.uint8).reshape(-1, config.B)
    segs = integerize_allocation(config)
    if messages.shape[0] == 0:
        return [np.zeros((T, 0), dtype=np.complex128) for T in config.T_l]
    coded = encode_message(messages, code_for(config))
    return [modulate_batch(block, seg).T.copy() for block, seg in zip(split_codewords(coded, config), segs)]
