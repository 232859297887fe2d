"""Variational Bayesian CP decomposition with constant-energy symbol factors.

The model is ``Y = [[X_1, ..., X_L, H]] + [[Xr_1, ..., Xr_L, Hr]] + Z``: the
first Kruskal term holds ``K`` candidate components (more than the true
count), the second the regenerated symbols of already recovered messages
whose channels ``Hr`` are still unknown. Symbol columns share a per-component
precision ``lambda``, channel columns a precision ``gamma``; components whose
channel energy falls to ``eps_a`` are pruned on the fly. After every sweep the
symbol columns are rescaled to energy ``T_l`` and the scale is pushed into
the channel factor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import check_factors, check_random_state, check_tensor
from .tensor_ops import fro_norm2, hadamard, khatri_rao, kruskal, others_khatri_rao, unfold

logger = logging.getLogger(__name__)

_JITTER = 1e-12


@dataclass
class PosteriorState:
    """Posterior statistics. ``Theta[l]`` is the covariance shared by all rows of ``X[l]``."""

    X: List[np.ndarray]
    Theta: List[np.ndarray]
    H: np.ndarray
    Phi: np.ndarray
    lam: np.ndarray
    gam: np.ndarray
    n0_inv: float
    Xr: List[np.ndarray]
    Hr: np.ndarray
    Xi: np.ndarray

    @property
    def K(self) -> int:
        return self.H.shape[1]

    @property
    def K_r(self) -> int:
        return self.Hr.shape[1]

    @property
    def L(self) -> int:
        return len(self.X)

    @property
    def T_l(self):
        return tuple(x.shape[0] for x in self.X)

    @property
    def M(self) -> int:
        return self.H.shape[0]

    def copy(self) -> "PosteriorState":
        return PosteriorState(
            X=[x.copy() for x in self.X], Theta=[t.copy() for t in self.Theta],
            H=self.H.copy(), Phi=self.Phi.copy(), lam=self.lam.copy(), gam=self.gam.copy(),
            n0_inv=self.n0_inv, Xr=self.Xr, Hr=self.Hr.copy(), Xi=self.Xi.copy())


@dataclass
class DecompositionResult:
    factors: List[np.ndarray]
    errors: np.ndarray  # (K_u_hat, L), Theta_l[k, k]
    channel: np.ndarray
    noise_precision: float
    n_iter: int
    trace: List[dict] = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return self.channel.shape[1]


def hermitian_inverse(A):
    """Inverse of a Hermitian positive-definite matrix, with jitter on failure."""
    A = 0.5 * (A + A.conj().T)
    K = A.shape[0]
    if K == 0:
        return A.copy()
    eye = np.eye(K)
    jitter = _JITTER * max(np.trace(A).real / K, 1e-300)
    for _ in range(8):
        try:
            c = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
            inv = scipy.linalg.cho_solve(c, eye, check_finite=False)
            return 0.5 * (inv + inv.conj().T)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            A = A + jitter * eye
            jitter *= 100
    inv = scipy.linalg.pinvh(A)
    return 0.5 * (inv + inv.conj().T)


def estimate_initial_K(Y, K_r=0, c_K=1.1):
    """Candidate count ``round(c_K * mean|Y - mean(Y)|^2 - K_r)``, floored at zero."""
    Y = np.asarray(Y)
    if Y.size == 0:
        return 0
    power = np.mean(np.abs(Y - Y.mean()) ** 2)
    return max(int(np.round(c_K * power - K_r)), 0)


INIT_METHODS = ("svd", "deflation", "random")
DEFLATION_POWER_ITERS = 20


def init_state(Y, recovered_symbols=None, K=None, c_K=1.1, a0=1e-6, b0=1e-6,
               a_lambda=1e-6, b_lambda=1e-6, a_gamma=1e-6, b_gamma=1e-6, rng=None, init="svd"):
    """Initial posterior; returns ``None`` when there is nothing to estimate.

    The starting means are fitted to ``Y`` minus a least-squares fit of the
    recovered components.

    ``init="svd"`` (default) starts the first ``min(K, n)`` columns of every
    factor at the leading left singular vectors of the matching unfolding and
    draws the rest at random. ``init="deflation"`` extracts ``K`` rank-1 terms
    one after the other, each by alternating power iterations on what the
    previous ones left; it recovers small low-noise tensors more often but
    locks onto noise when ``K`` greatly exceeds the signal rank.
    ``init="random"`` draws all columns. Symbol columns are scaled to energy
    ``T_l``, channel columns to energy ``M``.
    """
    Y = check_tensor(Y)
    rng = check_random_state(rng)
    if init not in INIT_METHODS:
        raise ValueError(f"init must be one of {INIT_METHODS}, got {init!r}")
    T_l, M = Y.shape[:-1], Y.shape[-1]
    Xr = _recovered(recovered_symbols, T_l)
    K_r = Xr[0].shape[1]
    if K is None:
        K = estimate_initial_K(Y, K_r, c_K)
    if K == 0:
        return None

    if init != "random" and K_r:
        # start from what the recovered symbols cannot explain
        V = khatri_rao(Xr[::-1])
        Hr_ls = np.linalg.lstsq(V, unfold(Y, len(T_l)).T, rcond=None)[0].T
        R = Y - kruskal(Xr + [Hr_ls])
    else:
        R = Y

    def start(mode, n):
        x = (rng.standard_normal((n, K)) + 1j * rng.standard_normal((n, K))) / np.sqrt(2)
        if init == "svd":
            A = unfold(R, mode)
            w, U = np.linalg.eigh(A @ A.conj().T)
            lead = U[:, np.argsort(w)[::-1][:min(K, n)]]
            x[:, :lead.shape[1]] = lead
        return x * np.sqrt(n) / np.linalg.norm(x, axis=0)

    if init == "deflation":
        F = _deflation_start(R, K, rng)
        X, H = F[:-1], F[-1]
    else:
        X = [start(l, T) for l, T in enumerate(T_l)]
        H = start(len(T_l), M)
    # zero initial covariances: identity ones double the column energies in the
    # first sweep and shrink most components to the prior before they can fit
    return PosteriorState(
        X=X, Theta=[np.zeros((K, K), dtype=complex) for _ in T_l],
        H=H, Phi=np.zeros((K, K), dtype=complex),
        lam=np.full(K, a_lambda / b_lambda), gam=np.full(K, a_gamma / b_gamma),
        n0_inv=a0 / b0,
        Xr=Xr, Hr=np.zeros((M, K_r), dtype=complex), Xi=np.eye(K_r, dtype=complex))


def _contract(R, vecs, skip):
    """Contract ``R`` with the conjugate of ``vecs[m]`` along every mode ``m != skip``."""
    out = R
    for m in reversed(range(R.ndim)):
        if m != skip:
            out = np.tensordot(out, vecs[m].conj(), axes=([m], [0]))
    return out


def _unit(rng, n):
    u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return u / np.linalg.norm(u)


def _deflation_start(R, K, rng, n_power=DEFLATION_POWER_ITERS):
    """``K`` rank-1 terms fitted greedily; term ``k`` is taken from ``R`` minus terms ``0..k-1``."""
    R = R.copy()
    F = [np.zeros((n, K), dtype=complex) for n in R.shape]
    for k in range(K):
        # start from the fibres through the largest remaining entry
        idx = np.unravel_index(np.argmax(np.abs(R)), R.shape)
        v = []
        for n, dim in enumerate(R.shape):
            u = R[idx[:n] + (slice(None),) + idx[n + 1:]]
            nrm = np.linalg.norm(u)
            v.append(u / nrm if nrm > 0 else _unit(rng, dim))
        for _ in range(n_power):
            for n in range(R.ndim):
                u = _contract(R, v, n)
                nrm = np.linalg.norm(u)
                if nrm > 0:
                    v[n] = u / nrm
        weight = _contract(R, v, R.ndim - 1) @ v[-1].conj()
        R -= weight * kruskal([u[:, None] for u in v])
        for n, u in enumerate(v):
            F[n][:, k] = u * np.sqrt(R.shape[n])
    return F


def _recovered(recovered_symbols, T_l):
    if recovered_symbols is None or len(recovered_symbols) == 0:
        return [np.zeros((T, 0), dtype=complex) for T in T_l]
    return check_factors(recovered_symbols, rows=T_l, name="recovered_symbols")


def _gram(state, l):
    """E[X_l^H X_l] = X_l^H X_l + T_l Theta_l^*."""
    x = state.X[l]
    return x.conj().T @ x + x.shape[0] * state.Theta[l].conj()


def recovered_reconstruction(state):
    """``W = [[Xr_1, ..., Xr_L, Hr]]``."""
    return kruskal(state.Xr + [state.Hr])


def mean_reconstruction(state):
    """``X = [[X_1, ..., X_L, H]]``."""
    return kruskal(state.X + [state.H])


def update_symbol_factors(state, Y, W=None):
    """Sweep the L symbol factors in order, each from the freshest others."""
    if W is None:
        W = recovered_reconstruction(state)
    R = Y - W
    M = state.M
    EHH = state.H.conj().T @ state.H + M * state.Phi.conj()
    grams = [_gram(state, l) for l in range(state.L)]
    for l in range(state.L):
        J_l = hadamard([g for i, g in enumerate(grams) if i != l] or [np.ones_like(EHH)])
        prec = state.n0_inv * (J_l * EHH) + np.diag(state.lam)
        Theta = hermitian_inverse(prec)
        V = others_khatri_rao(state.X + [state.H], l)
        state.X[l] = state.n0_inv * (unfold(R, l) @ V.conj()) @ Theta.T
        state.Theta[l] = Theta
        grams[l] = _gram(state, l)
    return state


def update_channel_factor(state, Y, W=None):
    if W is None:
        W = recovered_reconstruction(state)
    L = state.L
    J = hadamard([_gram(state, l) for l in range(L)])
    state.Phi = hermitian_inverse(state.n0_inv * J + np.diag(state.gam))
    V = khatri_rao(state.X[::-1])
    state.H = state.n0_inv * (unfold(Y - W, L) @ V.conj()) @ state.Phi.T
    return state


def update_recovered_channels(state, Y, X=None):
    if state.K_r == 0:
        return state
    if X is None:
        X = mean_reconstruction(state)
    G = hadamard([x.conj().T @ x for x in state.Xr])
    state.Xi = hermitian_inverse(state.n0_inv * G + np.eye(state.K_r))
    V = khatri_rao(state.Xr[::-1])
    state.Hr = state.n0_inv * (unfold(Y - X, state.L) @ V.conj()) @ state.Xi.T
    return state


def noise_rate(state, Y, W=None, X=None, b0=1e-6):
    """Posterior rate ``d0`` of the noise precision.

    Evaluated as ``b0 + ||Y - W - X||^2`` plus the posterior-variance excess of
    both Kruskal terms, which equals the expanded expectation term for term
    but avoids cancelling large inner products.
    """
    if W is None:
        W = recovered_reconstruction(state)
    if X is None:
        X = mean_reconstruction(state)
    M = state.M
    d0 = b0 + fro_norm2(Y - W - X)
    if state.K:
        HH = state.H.conj().T @ state.H
        J = hadamard([_gram(state, l) for l in range(state.L)])
        G = hadamard([x.conj().T @ x for x in state.X])
        d0 += float(np.sum(J * (HH + M * state.Phi.conj())).real - np.sum(G * HH).real)
    if state.K_r:
        Gr = hadamard([x.conj().T @ x for x in state.Xr])
        d0 += float(np.sum(Gr * (M * state.Xi.conj())).real)
    return d0


def update_noise_precision(state, Y, W=None, X=None, a0=1e-6, b0=1e-6):
    c0 = Y.size + a0
    d0 = noise_rate(state, Y, W, X, b0)
    if not d0 > b0:
        logger.debug("noise rate %.3g clamped", d0)
        d0 = b0 + 1e-12
    state.n0_inv = c0 / d0
    return state


def update_lambda(state, a_lambda=1e-6, b_lambda=1e-6):
    num = sum(state.T_l) + a_lambda
    den = b_lambda + sum(
        np.sum(np.abs(x) ** 2, axis=0) + x.shape[0] * np.diag(th).real
        for x, th in zip(state.X, state.Theta))
    state.lam = num / den
    return state


def update_gamma(state, a_gamma=1e-6, b_gamma=1e-6):
    M = state.M
    den = np.sum(np.abs(state.H) ** 2, axis=0) + M * np.diag(state.Phi).real + b_gamma
    state.gam = (M + a_gamma) / den
    return state


_TINY = 1e-100


def renormalize(state):
    """Rescale symbol columns to energy ``T_l``; the channel absorbs the inverse scale."""
    total = np.ones(state.K)
    for l, x in enumerate(state.X):
        norms = np.linalg.norm(x, axis=0)
        live = norms > _TINY
        scale = np.where(live, np.sqrt(x.shape[0]) / np.where(live, norms, 1.0), 1.0)
        state.X[l] = x * scale
        state.Theta[l] = scale[:, None] * state.Theta[l] * scale[None, :]
        total = total * scale
    state.H = state.H / total
    state.Phi = state.Phi / total[:, None] / total[None, :]
    return state


def prune(state, eps_a=1e-2):
    """Drop components with channel energy ``<= eps_a``."""
    keep = np.flatnonzero(np.sum(np.abs(state.H) ** 2, axis=0) > eps_a)
    if keep.size == state.K:
        return state
    sub = np.ix_(keep, keep)
    state.X = [x[:, keep] for x in state.X]
    state.Theta = [t[sub] for t in state.Theta]
    state.H = state.H[:, keep]
    state.Phi = state.Phi[sub]
    state.lam = state.lam[keep]
    state.gam = state.gam[keep]
    return state


def _check_psd(name, A):
    if A.size == 0:
        return
    if not np.allclose(A, A.conj().T, atol=1e-9 * max(1.0, np.abs(A).max())):
        raise AssertionError(f"{name} is not Hermitian")
    w = np.linalg.eigvalsh(0.5 * (A + A.conj().T))
    if w.min() < -1e-9 * max(np.trace(A).real, 1e-300):
        raise AssertionError(f"{name} has negative eigenvalue {w.min():.3g}")


class GMBTD(BaseEstimator):
    """Grassmannian-aided Bayesian tensor decomposition.

    Parameters
    ----------
    eps_a : float
        Pruning threshold on the channel-column energy.
    eps_iter : float
        Stop when the relative change of the symbol factors drops below it.
    c_K : float
        Over-estimation factor of the initial component count.
    n_components : int or None
        Fixed initial component count; ``None`` estimates it from the data.
    max_iter : int
        Hard cap on the number of sweeps.
    init : {"svd", "deflation", "random"}
        Starting point of the factor means (see :func:`init_state`).
    renormalize : bool
        Apply the constant-energy column revision. ``False`` gives the plain
        Bayesian CPD baseline (ablation only).
    check_invariants : bool
        Verify covariance PSD-ness and positive precisions every sweep.
    random_state : int, Generator or None

    Attributes
    ----------
    factors_ : list of ndarray, shapes (T_l, K_u_hat)
    errors_ : ndarray (K_u_hat, L)
        Per-entry posterior variance ``Theta_l[k, k]`` of every symbol estimate.
    channel_ : ndarray (M, K_u_hat)
    n_components_ : int
    noise_precision_ : float
    n_iter_ : int
    trace_ : list of dict
        One row per sweep: iteration, K, residual, n0_inv.
    """

    def __init__(self, eps_a=1e-2, eps_iter=1e-6, c_K=1.1, n_components=None,
                 a0=1e-6, b0=1e-6, a_lambda=1e-6, b_lambda=1e-6, a_gamma=1e-6, b_gamma=1e-6,
                 max_iter=200, renormalize=True, init="svd", check_invariants=False, random_state=None):
        self.eps_a = eps_a
        self.eps_iter = eps_iter
        self.c_K = c_K
        self.n_components = n_components
        self.a0 = a0
        self.b0 = b0
        self.a_lambda = a_lambda
        self.b_lambda = b_lambda
        self.a_gamma = a_gamma
        self.b_gamma = b_gamma
        self.max_iter = max_iter
        self.renormalize = renormalize
        self.init = init
        self.check_invariants = check_invariants
        self.random_state = random_state

    @classmethod
    def from_config(cls, config, **params):
        base = dict(eps_a=config.eps_a, eps_iter=config.eps_iter, c_K=config.c_K,
                    a0=config.a0, b0=config.b0, a_lambda=config.a_lambda, b_lambda=config.b_lambda,
                    a_gamma=config.a_gamma, b_gamma=config.b_gamma, max_iter=config.max_vb_iters)
        base.update(params)
        return cls(**base)

    def fit(self, Y, recovered_symbols=None):
        Y = check_tensor(Y)
        rng = check_random_state(self.random_state)
        state = init_state(Y, recovered_symbols, K=self.n_components, c_K=self.c_K,
                           a0=self.a0, b0=self.b0, a_lambda=self.a_lambda, b_lambda=self.b_lambda,
                           a_gamma=self.a_gamma, b_gamma=self.b_gamma, rng=rng, init=self.init)
        self.trace_ = []
        self.n_iter_ = 0
        if state is None:
            T_l, M = Y.shape[:-1], Y.shape[-1]
            self._set_result([np.zeros((T, 0), complex) for T in T_l], np.zeros((0, len(T_l))),
                             np.zeros((M, 0), complex), self.a0 / self.b0, None)
            return self

        x_old = [x.copy() for x in state.X]
        for it in range(1, self.max_iter + 1):
            self.n_iter_ = it
            K_start = state.K
            W = recovered_reconstruction(state)
            update_symbol_factors(state, Y, W)
            update_channel_factor(state, Y, W)
            update_noise_precision(state, Y, W, mean_reconstruction(state), self.a0, self.b0)
            update_lambda(state, self.a_lambda, self.b_lambda)
            update_gamma(state, self.a_gamma, self.b_gamma)
            if self.renormalize:
                renormalize(state)
            prune(state, self.eps_a)
            X = mean_reconstruction(state)
            update_recovered_channels(state, Y, X)
            if self.check_invariants:
                self._check(state)
            resid = np.sqrt(fro_norm2(Y - recovered_reconstruction(state) - X))
            self.trace_.append(dict(iteration=it, K=state.K, residual=resid, n0_inv=state.n0_inv))
            if state.K == 0:
                break
            # a sweep that pruned components is never declared converged
            if state.K == K_start:
                num = sum(fro_norm2(a - b) for a, b in zip(x_old, state.X))
                den = sum(fro_norm2(a) for a in x_old)
                if den > 0 and num / den < self.eps_iter:
                    break
            x_old = [x.copy() for x in state.X]

        errors = np.stack([np.diag(t).real for t in state.Theta], axis=1)
        self._set_result(state.X, errors, state.H, state.n0_inv, state)
        return self

    def _set_result(self, factors, errors, channel, n0_inv, state):
        self.factors_ = [np.asarray(f) for f in factors]
        self.errors_ = errors
        self.channel_ = channel
        self.n_components_ = channel.shape[1]
        self.noise_precision_ = float(n0_inv)
        self.state_ = state
        self.result_ = DecompositionResult(self.factors_, errors, channel, float(n0_inv),
                                           self.n_iter_, self.trace_)

    @staticmethod
    def _check(state):
        for l, th in enumerate(state.Theta):
            _check_psd(f"Theta[{l}]", th)
        _check_psd("Phi", state.Phi)
        _check_psd("Xi", state.Xi)
        if not (state.n0_inv > 0 and np.all(state.lam > 0) and np.all(state.gam > 0)):
            raise AssertionError("precisions must stay positive")

    def reconstruct(self):
        if not hasattr(self, "factors_"):
            raise NotFittedError("call fit first")
        return kruskal(self.factors_ + [self.channel_])


def run(Y, recovered_symbols, config, rng=None, **params):
    """Decompose ``Y`` under ``config``'s thresholds and hyperparameters."""
    return GMBTD.from_config(config, random_state=rng, **params).fit(Y, recovered_symbols).result_


def complexity_estimate(T_l, M, K, K_r=0):
    """Complex multiplications per sweep, row by row; ``total`` is their sum."""
    L = len(T_l)
    T = int(np.prod(T_l))
    S = int(sum(T_l))
    rows = {
        "W": K_r * T * M,
        "Theta": K**2 * S + L * (L - 1) * K**2 + L * K**3,
        "X": K**2 * S + L * K * T * M,
        "Phi": K**2 * M + (L - 1) * K**2 + K**3,
        "H": K**2 * M + K * T * M,
        "n0_inv": L * K**2 + K_r**2 + 2 * T * M,
        "lambda": K * S,
        "gamma": K * M,
        "X_recon": K * T * M,
        "H_r": K_r**2 * M + K_r * T * M,
    }
    rows["total"] = sum(rows.values())
    return rows
