"""Scaled forward-backward recursions and the sample log-likelihood.

The per-subject functions (:func:`forward`, :func:`backward`,
:func:`posterior`) are the readable reference; :func:`evaluate` runs the
same recursions for a whole panel through the selected kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import backend
from .errors import ZeroLikelihoodError
from .links import initial_probs_batch, log_response, transition_matrices
from .model import Design, ModelConfig, PanelData, Parameters, build_design


@dataclass(frozen=True, eq=False)
class SubjectLikelihood:
    log_manifest: float
    scaled_forward: np.ndarray   # (T, k), rows sum to one
    log_scale: np.ndarray        # (T,)
    scaled_backward: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    state_marginals: np.ndarray  # (T, k)
    pair_marginals: np.ndarray   # (T - 1, k, k); entry t-2 holds R_t


def _as_log_m(log_m) -> np.ndarray:
    log_m = np.asarray(log_m, dtype=np.float64)
    return log_m.reshape(-1, log_m.shape[-1])


def forward(pi, transition_mats: Sequence, log_m) -> SubjectLikelihood:
    """Normalized forward recursion for one subject.

    ``transition_mats`` holds the matrices for occasions 2..T and ``log_m``
    the log response probabilities, one row per occasion.
    """
    log_m = _as_log_m(log_m)
    T, k = log_m.shape
    alpha = np.empty((T, k))
    log_scale = np.empty(T)
    prev = np.asarray(pi, dtype=np.float64)
    for t in range(T):
        shift = log_m[t].max()
        if not np.isfinite(shift):
            raise ZeroLikelihoodError(f"response vector at occasion {t + 1} is impossible in every state")
        a = np.exp(log_m[t] - shift) * (prev if t == 0 else np.asarray(transition_mats[t - 1]).T @ prev)
        tot = a.sum()
        if not tot > 0:
            raise ZeroLikelihoodError(f"zero probability at occasion {t + 1}")
        alpha[t] = a / tot
        log_scale[t] = shift + math.log(tot)
        prev = alpha[t]
    return SubjectLikelihood(float(math.fsum(log_scale)), alpha, log_scale)


def backward(transition_mats: Sequence, log_m, log_scale) -> np.ndarray:
    """Backward vectors scaled by the forward normalizers (last row is ones)."""
    log_m = _as_log_m(log_m)
    T, k = log_m.shape
    back = np.ones((T, k))
    for t in range(T - 1, 0, -1):
        w = np.exp(log_m[t] - log_scale[t])
        back[t - 1] = np.asarray(transition_mats[t - 1]) @ (w * back[t])
    return back


def posterior(pi, transition_mats: Sequence, log_m) -> PosteriorSummary:
    log_m = _as_log_m(log_m)
    fw = forward(pi, transition_mats, log_m)
    back = backward(transition_mats, log_m, fw.log_scale)
    T, k = log_m.shape
    marg = fw.scaled_forward * back
    marg /= marg.sum(axis=1, keepdims=True)
    pairs = np.empty((max(T - 1, 0), k, k))
    for t in range(1, T):
        w = np.exp(log_m[t] - fw.log_scale[t]) * back[t]
        pairs[t - 1] = fw.scaled_forward[t - 1][:, None] * np.asarray(transition_mats[t - 1]) * w[None, :]
    return PosteriorSummary(marg, pairs)


# ---------------------------------------------------------------------------
# Whole-panel evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PanelEvaluation:
    loglik_i: np.ndarray   # (n,)
    post: np.ndarray       # (N, k) posterior state probabilities
    pair: np.ndarray       # (N, k, k); rows of first occasions are zero
    pi: np.ndarray         # (n, k) initial probabilities
    trans: np.ndarray      # (N, k, k)

    @property
    def loglik(self) -> float:
        return float(math.fsum(self.loglik_i))


def model_arrays(theta: Parameters, panel: PanelData, design: Design):
    """(pi, trans, log_m) for every subject / occasion of the panel."""
    k = design.layout.config.k
    pi = initial_probs_batch(theta.beta, design.x_init, k)
    trans = transition_matrices(theta.gamma, design.x_trans, design.layout)
    log_m = log_response(theta.lam, panel.arrays.y)
    return pi, trans, log_m


def evaluate(theta: Parameters, panel: PanelData, config: ModelConfig,
             design: Design | None = None, kernel=None) -> PanelEvaluation:
    """Run the recursions for every subject; raises on a zero likelihood."""
    if design is None:
        design = build_design(panel, config)
    design.layout.check(theta)
    pi, trans, log_m = model_arrays(theta, panel, design)
    kernel = kernel or backend.forward_backward
    loglik_i, post, pair = kernel(np.ascontiguousarray(log_m), np.ascontiguousarray(pi),
                                  np.ascontiguousarray(trans), panel.arrays.offsets)
    bad = np.flatnonzero(~np.isfinite(loglik_i))
    if bad.size:
        sid = panel.subjects[bad[0]].subject_id
        raise ZeroLikelihoodError(f"subject {sid} has zero likelihood", subject_id=sid)
    return PanelEvaluation(loglik_i, post, pair, pi, trans)


def log_likelihood(theta: Parameters, panel: PanelData, config: ModelConfig,
                   design: Design | None = None) -> float:
    """Sample log-likelihood, summed with exact rounding (order independent)."""
    return evaluate(theta, panel, config, design).loglik


def independence_loglik(panel: PanelData) -> float:
    """Maximized log-likelihood of the one-state model."""
    y = panel.arrays.y
    total = 0.0
    for j in range(y.shape[1]):
        ones = float(y[:, j].sum())
        zeros = y.shape[0] - ones
        for cnt in (ones, zeros):
            if cnt > 0:
                total += cnt * math.log(cnt / y.shape[0])
    return total
