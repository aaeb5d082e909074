"""Link functions: regression parameters to initial, transition and response probabilities."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import InfeasibleCutsError
from .model import Layout, ModelConfig, admissible

FEASIBILITY_TOL = 1e-12


def cumulative_logits(beta, x, k: int) -> np.ndarray:
    """Global logits log P(C > c) / P(C <= c), c = 1..k-1, one row per design row."""
    beta = np.asarray(beta, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n_cuts = max(k - 2, 0)
    lin = x @ beta[n_cuts:]
    shifts = np.concatenate([[0.0], beta[:n_cuts]])
    return lin[:, None] + shifts[None, :]


def probs_from_logits(eta: np.ndarray) -> np.ndarray:
    """Invert cumulative logits (rows) into category probabilities."""
    n, m = eta.shape
    upper = np.concatenate([np.full((n, 1), np.inf), eta], axis=1)  # eta_{c-1}
    lower = np.concatenate([eta, np.full((n, 1), -np.inf)], axis=1)  # eta_c
    # sigma(a) - sigma(b) loses precision when both are near 1; use the complement form there.
    with np.errstate(invalid="ignore"):
        use_upper_tail = (upper + lower) > 0
    direct = expit(upper) - expit(lower)
    flipped = expit(-lower) - expit(-upper)
    return np.where(use_upper_tail, flipped, direct)


def initial_probs_batch(beta, x, k: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if k == 1:
        return np.ones((x.shape[0], 1))
    pi = probs_from_logits(cumulative_logits(beta, x, k))
    if np.any(pi < -FEASIBILITY_TOL) or not np.all(np.isfinite(pi)):
        raise InfeasibleCutsError("cumulative logits are not nonincreasing across cut points")
    return np.clip(pi, 0.0, 1.0)


def initial_probs(beta, x, k: int) -> np.ndarray:
    """Initial state distribution for one design row."""
    return initial_probs_batch(beta, np.asarray(x, dtype=np.float64).reshape(1, -1), k)[0]


def logits_from_probs(pi) -> np.ndarray:
    """Forward map: category probabilities to cumulative logits."""
    pi = np.asarray(pi, dtype=np.float64)
    head = np.cumsum(pi)[:-1]
    tail = np.cumsum(pi[::-1])[::-1][1:]
    return np.log(tail) - np.log(head)


def transition_matrices(gamma, x, layout: Layout) -> np.ndarray:
    """Tridiagonal transition matrices, one per row of ``x`` (shape (N, k, k))."""
    k = layout.config.k
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    gamma = np.asarray(gamma, dtype=np.float64)
    n = x.shape[0]
    out = np.zeros((n, k, k))
    if k == 1:
        out[:, 0, 0] = 1.0
        return out
    eta = x @ gamma.T  # (N, n_blocks)
    for c in range(k):
        dests = admissible(c, k)
        logits = np.column_stack([np.zeros(n)] + [eta[:, layout.block_of[(c, d)]] for d in dests])
        top = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - top)
        p = e / e.sum(axis=1, keepdims=True)
        out[:, c, c] = p[:, 0]
        for m, d in enumerate(dests, start=1):
            out[:, c, d] = p[:, m]
    return out


def transition_matrix(gamma, x, config: ModelConfig, n_items: int = 1,
                      n_facilities: int = 1) -> np.ndarray:
    """Transition matrix for one design row."""
    layout = Layout(config, n_items, n_facilities)
    return transition_matrices(gamma, np.asarray(x, dtype=np.float64).reshape(1, -1), layout)[0]


def log_response(lam, y) -> np.ndarray:
    """log m(y|c) for every row of ``y`` (shape (N, k)), with 0 log 0 = 0."""
    lam = np.asarray(lam, dtype=np.float64)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    with np.errstate(divide="ignore"):
        log_p = np.where(lam > 0, np.log(np.where(lam > 0, lam, 1.0)), 0.0)
        log_q = np.where(lam < 1, np.log(np.where(lam < 1, 1.0 - lam, 1.0)), 0.0)
    out = y @ log_p + (1.0 - y) @ log_q
    impossible = (y @ (lam <= 0)) + ((1.0 - y) @ (lam >= 1)) > 0
    out[impossible] = -np.inf
    return out


def response_vector(lam, y) -> tuple[np.ndarray, np.ndarray]:
    """(m, log m) for a single response vector ``y``."""
    logm = log_response(lam, np.asarray(y).reshape(1, -1))[0]
    return np.exp(logm), logm
