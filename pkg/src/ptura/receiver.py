"""Iterative Bayesian receiver with regenerated-symbol feedback.

Each round decomposes the received tensor given the symbols of the messages
recovered so far (their channels stay unknown), soft-demodulates every new
component, and runs CRC-aided list decoding. Valid messages join the
recovered set; the loop stops when a round adds nothing.
"""
from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import check_tensor
from .coding import CRC_LEN, code_for, crc_check, crc_encode, polar_decode_scl
from .config import integerize_allocation
from .gmbtd import GMBTD
from .grassmannian import DegenerateInputError, soft_llr
from .transmitter import transmit

logger = logging.getLogger(__name__)


def regenerate_symbols(messages, config):
    """Transmitter symbols for already decoded messages, one column per message."""
    return transmit(np.asarray(messages, dtype=np.uint8).reshape(-1, config.B), config)


def to_decoder_llr(llr):
    """``soft_llr`` reports ``ln P(1)/P(0)``; the polar decoder expects ``ln P(0)/P(1)``."""
    return -np.asarray(llr, dtype=float)


def component_llrs(factors, errors, config):
    """Coded-bit LLRs (decoder convention) for every component.

    Returns a list with one ``(B_p,)`` vector per column, or ``None`` for
    columns whose estimate is degenerate in some segment.
    """
    segs = integerize_allocation(config)
    K = factors[0].shape[1] if factors else 0
    out = []
    for k in range(K):
        try:
            parts = [soft_llr(x[:, k], errors[k, l], seg) for l, (x, seg) in enumerate(zip(factors, segs))]
        except DegenerateInputError:
            out.append(None)
            continue
        out.append(to_decoder_llr(np.concatenate(parts)))
    return out


def decode_components(factors, errors, config):
    """CRC-valid messages decoded from the decomposition, duplicates dropped."""
    code = code_for(config)
    found, seen = [], set()
    for llr in component_llrs(factors, errors, config):
        if llr is None:
            continue
        msg = polar_decode_scl(llr, config.n_list, code)
        if msg is None or msg.tobytes() in seen:
            continue
        seen.add(msg.tobytes())
        found.append(msg)
    return found


def round_seed(seed, r):
    """Seed of round ``r`` (0-based) for a receiver seeded with ``seed``."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + (r,))


class IBRFBReceiver(BaseEstimator):
    """Recover the set of transmitted messages from a received tensor.

    Parameters
    ----------
    config : SystemConfig
    feedback : bool, default=True
        ``False`` stops after the first round (the feedback-free receiver).
    drop_false_feedback : bool, default=False
        Ablation: keep messages absent from ``true_messages`` out of the
        fed-back symbols. They are still reported in ``messages_``.
    random_state : int, SeedSequence or None
        Round ``r`` draws from its own child stream, so the first round is
        identical with and without feedback.

    Attributes
    ----------
    messages_ : ndarray (n, B)
        Recovered messages in order of discovery.
    history_ : list of dict
        Per round: index, K_u_hat, new and cumulative counts, VB iterations,
        and the round's symbol estimates under ``factors``.
    rounds_ : int
    """

    def __init__(self, config, feedback=True, drop_false_feedback=False, random_state=None):
        self.config = config
        self.feedback = feedback
        self.drop_false_feedback = drop_false_feedback
        self.random_state = random_state

    def _round_seed(self, r):
        return round_seed(self.random_state, r)

    def fit(self, Y, true_messages=None):
        cfg = self.config
        Y = check_tensor(Y, cfg.shape)
        if self.drop_false_feedback and true_messages is None:
            raise ValueError("drop_false_feedback needs true_messages")
        truth = None if true_messages is None else {
            m.tobytes() for m in np.asarray(true_messages, dtype=np.uint8).reshape(-1, cfg.B)}
        # pin the root entropy so an unseeded receiver is still consistent across rounds
        if self.random_state is None:
            self.random_state = np.random.SeedSequence()
        recovered, keys = [], set()
        self.history_ = []
        max_rounds = cfg.max_fb_rounds if self.feedback else 1
        for r in range(max_rounds):
            fed = [m for m in recovered if not self.drop_false_feedback or m.tobytes() in truth]
            model = GMBTD.from_config(cfg, random_state=self._round_seed(r)).fit(
                Y, regenerate_symbols(fed, cfg) if fed else None)
            new = [m for m in decode_components(model.factors_, model.errors_, cfg) if m.tobytes() not in keys]
            for m in new:
                keys.add(m.tobytes())
                recovered.append(m)
            self.history_.append(dict(round=r + 1, K_u_hat=model.n_components_, n_new=len(new),
                                      n_recovered=len(recovered), vb_iters=model.n_iter_,
                                      factors=model.factors_))
            logger.debug("round %d: K_u_hat=%d new=%d total=%d", r + 1, model.n_components_, len(new), len(recovered))
            if not new:
                break
        self.rounds_ = len(self.history_)
        self.messages_ = (np.array(recovered, dtype=np.uint8) if recovered
                          else np.zeros((0, cfg.B), dtype=np.uint8))
        if len(recovered):
            assert np.all(crc_check(crc_encode(self.messages_), cfg.B + CRC_LEN))
        return self

    def predict(self, Y):
        return self.fit(Y).messages_

    @property
    def message_set_(self):
        if not hasattr(self, "messages_"):
            raise NotFittedError("call fit first")
        return {m.tobytes() for m in self.messages_}


def ibr_fb(Y, config, rng=None):
    """Recovered messages ``(n, B)`` with feedback rounds."""
    return IBRFBReceiver(config, feedback=True, random_state=rng).fit(Y).messages_


def br_single_pass(Y, config, rng=None):
    """Recovered messages ``(n, B)`` from the first round only."""
    return IBRFBReceiver(config, feedback=False, random_state=rng).fit(Y).messages_
