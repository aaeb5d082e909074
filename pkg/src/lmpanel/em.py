"""EM estimation: E-step, the three M-steps and the multi-start driver."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InfeasibleCutsError, NumericalError, ZeroLikelihoodError
from .likelihood import PanelEvaluation, evaluate, independence_loglik
from .links import cumulative_logits, probs_from_logits, transition_matrices
from .model import (Design, Layout, ModelConfig, PanelData, Parameters, admissible,
                    build_design, count_parameters)

log = logging.getLogger(__name__)

GAMMA_RIDGE = 1e-8
EMPTY_STATE_WEIGHT = 1e-12
PI_FLOOR = 1e-150


@dataclass(frozen=True)
class FitSettings:
    tol: float = 1e-8
    max_iter: int = 5000
    n_starts: int = 25
    warm_iters: int = 15
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        for name in ("max_iter", "warm_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.n_starts < 0:
            raise ValueError("n_starts must be nonnegative")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass(frozen=True, eq=False)
class ExpectedCounts:
    post: np.ndarray     # (N, k) posterior state probabilities, all occasions
    pair: np.ndarray     # (N, k, k) posterior transition probabilities; zero at first occasions
    offsets: np.ndarray

    @property
    def w1(self) -> np.ndarray:
        return self.post[self.offsets[:-1]]

    @property
    def w_state(self) -> np.ndarray:
        return self.post

    @property
    def w_pair(self) -> np.ndarray:
        first = np.zeros(len(self.post), dtype=bool)
        first[self.offsets[:-1]] = True
        return self.pair[~first]


@dataclass(eq=False)
class FitResult:
    theta_hat: Parameters
    loglik: float
    n_iter: int
    converged: bool
    v: int
    loglik_trace: list
    start_logliks: list
    config: ModelConfig
    layout: Layout
    diagnostics: Counter = field(default_factory=Counter)


# ---------------------------------------------------------------------------
# E-step and expected complete-data objectives
# ---------------------------------------------------------------------------


def counts_from_evaluation(ev: PanelEvaluation, panel: PanelData) -> ExpectedCounts:
    return ExpectedCounts(ev.post, ev.pair, panel.arrays.offsets)


def e_step(theta: Parameters, panel: PanelData, config: ModelConfig,
           design: Design | None = None) -> tuple[ExpectedCounts, float]:
    ev = evaluate(theta, panel, config, design)
    return counts_from_evaluation(ev, panel), ev.loglik


def _xlogy_sum(w, p) -> float:
    """sum w * log p with 0 * log 0 = 0; -inf if positive weight meets p <= 0."""
    w = np.asarray(w)
    p = np.asarray(p)
    pos = w > 0
    if np.any(p[pos] <= 0):
        return -math.inf
    return float(np.sum(w[pos] * np.log(p[pos])))


def expected_beta_objective(beta, counts: ExpectedCounts, design: Design) -> float:
    k = design.layout.config.k
    if k == 1:
        return 0.0
    cuts = np.concatenate([[0.0], np.asarray(beta)[: k - 2]])
    if np.any(np.diff(cuts) > 0):
        return -math.inf
    eta = cumulative_logits(beta, design.x_init, k)
    return _xlogy_sum(counts.w1, probs_from_logits(eta))


def _transition_rows(design: Design, counts: ExpectedCounts):
    first = np.zeros(len(counts.post), dtype=bool)
    first[counts.offsets[:-1]] = True
    return design.x_trans[~first], counts.pair[~first]


def expected_gamma_objective(gamma, counts: ExpectedCounts, design: Design) -> float:
    if design.layout.config.k == 1:
        return 0.0
    x, w = _transition_rows(design, counts)
    return _gamma_value(gamma, TransitionStats.build(x, w, design.layout))


def expected_lambda_objective(lam, counts: ExpectedCounts, panel: PanelData) -> float:
    y = panel.arrays.y
    s1 = y.T @ counts.post             # (J, k) expected ones
    s0 = (1.0 - y).T @ counts.post     # (J, k) expected zeros
    lam = np.asarray(lam)
    return _xlogy_sum(s1, lam) + _xlogy_sum(s0, 1.0 - lam)


def expected_complete_loglik(theta: Parameters, counts: ExpectedCounts, panel: PanelData,
                             design: Design) -> float:
    return (expected_beta_objective(theta.beta, counts, design)
            + expected_gamma_objective(theta.gamma, counts, design)
            + expected_lambda_objective(theta.lam, counts, panel))


# ---------------------------------------------------------------------------
# Derivatives
# ---------------------------------------------------------------------------


def beta_derivatives(beta, w1, x, k: int, hessian: bool = True):
    """Gradient, Hessian and Fisher information of sum_i sum_c w_i(c) log pi_i(c)."""
    beta = np.asarray(beta, dtype=np.float64)
    n_cuts = k - 2
    eta = cumulative_logits(beta, x, k)
    pi = probs_from_logits(eta)
    F = expit(eta)
    F1 = F * (1.0 - F)
    # an underflowed probability with a tiny positive weight would give 0 * inf below
    pi_safe = np.maximum(pi, PI_FLOOR)
    r = np.where(w1 > 0, w1 / pi_safe, 0.0)
    g_eta = F1 * (r[:, 1:] - r[:, :-1])                       # (n, k-1)
    grad = np.concatenate([g_eta[:, 1:].sum(axis=0), x.T @ g_eta.sum(axis=1)])
    if not hessian:
        return grad
    def assemble(h_eta):
        # d eta_a / d beta = (e_{a-1} for a >= 1 on the cut shifts, x on the slopes)
        out = np.empty((len(beta), len(beta)))
        row_sums = h_eta.sum(axis=2)                       # (n, k-1)
        out[:n_cuts, :n_cuts] = h_eta[:, 1:, 1:].sum(axis=0)
        out[:n_cuts, n_cuts:] = row_sums[:, 1:].T @ x
        out[n_cuts:, :n_cuts] = out[:n_cuts, n_cuts:].T
        out[n_cuts:, n_cuts:] = x.T @ (row_sums.sum(axis=1)[:, None] * x)
        return out

    s = np.where(w1 > 0, w1 / pi_safe**2, 0.0)
    F2 = F1 * (1.0 - 2.0 * F)
    h = np.zeros((x.shape[0], k - 1, k - 1))
    idx = np.arange(k - 1)
    h[:, idx, idx] = F2 * (r[:, 1:] - r[:, :-1]) - F1**2 * (s[:, 1:] + s[:, :-1])
    off = F1[:, :-1] * F1[:, 1:] * s[:, 1:-1]
    h[:, idx[:-1], idx[1:]] = off
    h[:, idx[1:], idx[:-1]] = off
    # Fisher information: weights replaced by their expectation n_i * pi_i
    n_i = w1.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(pi > 0, n_i / pi, 0.0)
    f = np.zeros_like(h)
    f[:, idx, idx] = F1**2 * (e[:, 1:] + e[:, :-1])
    foff = -F1[:, :-1] * F1[:, 1:] * e[:, 1:-1]
    f[:, idx[:-1], idx[1:]] = foff
    f[:, idx[1:], idx[:-1]] = foff
    return grad, assemble(h), assemble(f)


@dataclass(frozen=True, eq=False)
class TransitionStats:
    """Transition design rows (occasions t >= 2) with the pair weights split by origin state."""

    x: np.ndarray
    rows: tuple  # per origin c: (block indices, stay weights, [dest weights], row totals)

    @classmethod
    def build(cls, x, w, layout: Layout) -> "TransitionStats":
        k = layout.config.k
        rows = []
        for c in range(k):
            dests = admissible(c, k)
            rows.append((tuple(layout.block_of[(c, d)] for d in dests),
                         np.ascontiguousarray(w[:, c, c]),
                         [np.ascontiguousarray(w[:, c, d]) for d in dests],
                         w[:, c, :].sum(axis=1)))
        return cls(np.asarray(x), tuple(rows))


def _row_logprobs(eta, blocks):
    """log pi(stay), [log pi(d) for the admissible moves] of one origin state."""
    cols = [eta[:, b] for b in blocks]
    top = np.maximum(cols[0], 0.0)
    for col in cols[1:]:
        top = np.maximum(top, col)
    total = np.exp(-top)
    for col in cols:
        total += np.exp(col - top)
    lse = top + np.log(total)
    return -lse, [col - lse for col in cols]


def _gamma_value(gamma, stats: TransitionStats) -> float:
    eta = stats.x @ np.asarray(gamma).T
    total = 0.0
    for blocks, w_stay, w_moves, _ in stats.rows:
        log_stay, log_moves = _row_logprobs(eta, blocks)
        total += float(w_stay @ log_stay)
        for wm, lm in zip(w_moves, log_moves):
            total += float(wm @ lm)
    return total


def gamma_derivatives(gamma, x, w, layout: Layout, hessian: bool = True, stats=None):
    """Gradient and Hessian (flattened block-major) of sum w(c,d) log pi(d|c)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    nb, p = gamma.shape
    stats = stats if stats is not None else TransitionStats.build(x, w, layout)
    x = stats.x
    eta = x @ gamma.T
    resid = np.zeros((nb, x.shape[0]))
    S = {}
    for blocks, _, w_moves, n_c in stats.rows:
        _, log_moves = _row_logprobs(eta, blocks)
        P = [np.exp(lm) for lm in log_moves]
        for m, b in enumerate(blocks):
            resid[b] += w_moves[m] - n_c * P[m]
            if not hessian:
                continue
            for m2, b2 in enumerate(blocks):
                s = n_c * P[m] * ((m == m2) - P[m2])
                S[(b, b2)] = S[(b, b2)] + s if (b, b2) in S else s
    grad = (resid @ x).ravel()
    if not hessian:
        return grad
    H = np.zeros((nb * p, nb * p))
    for (b, b2), s in S.items():
        H[b * p:(b + 1) * p, b2 * p:(b2 + 1) * p] -= x.T @ (s[:, None] * x)
    return grad, H


def lambda_gradient(lam, counts: ExpectedCounts, panel: PanelData) -> np.ndarray:
    y = panel.arrays.y
    s1 = y.T @ counts.post
    s0 = (1.0 - y).T @ counts.post
    with np.errstate(divide="ignore", invalid="ignore"):
        return s1 / lam - s0 / (1.0 - lam)


# ---------------------------------------------------------------------------
# M-steps
# ---------------------------------------------------------------------------


def _newton_direction(grad, hess, fallback=None, diagnostics=None):
    """Ascent direction from a concave-side Newton system, with fallbacks.

    Tries the Newton system, then the Fisher information, then the Newton
    system with a small ridge (flat directions, e.g. a constant covariate),
    and finally a normalized gradient step.
    """
    neg = -hess
    systems = [neg, fallback]
    scale = max(1.0, float(np.max(np.abs(np.diag(neg))))) if neg.size else 1.0
    systems.append(neg + 1e-8 * scale * np.eye(len(grad)))
    for i, A in enumerate(systems):
        if A is None:
            continue
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            continue
        if i == 2 and diagnostics is not None:
            diagnostics["SINGULAR_STEP"] += 1
        z = np.linalg.solve(L, grad)
        return np.linalg.solve(L.T, z)
    if diagnostics is not None:
        diagnostics["SINGULAR_STEP"] += 1
    return grad / max(1.0, float(np.linalg.norm(grad)))


def _ascend(x0, objective, derivatives, *, grad_tol=1e-6, max_iter=100, max_halvings=40):
    """Damped Newton ascent; never returns a point worse than ``x0``."""
    x = np.array(x0, dtype=np.float64)
    f = objective(x)
    for _ in range(max_iter):
        grad, step = derivatives(x)
        if not np.all(np.isfinite(grad)) or np.linalg.norm(grad) < grad_tol:
            break
        a = 1.0
        for _ in range(max_halvings):
            cand = x + a * step
            fc = objective(cand)
            if np.isfinite(fc) and fc >= f:
                break
            a *= 0.5
        else:
            break
        moved = np.max(np.abs(cand - x))
        x, gain = cand, fc - f
        f = fc
        if moved < 1e-13 * (1.0 + np.max(np.abs(x))) or gain <= 1e-15 * abs(f):
            if np.linalg.norm(grad) < 1e-3:
                break
    return x, f


def m_step_beta(counts: ExpectedCounts, design: Design, beta_start, diagnostics=None) -> np.ndarray:
    """Maximize the expected initial-state term over beta (cuts kept ordered)."""
    k = design.layout.config.k
    if k == 1:
        return np.asarray(beta_start, dtype=np.float64)
    w1 = counts.w1
    x = design.x_init

    def objective(b):
        return expected_beta_objective(b, counts, design)

    def derivatives(b):
        grad, H, F = beta_derivatives(b, w1, x, k)
        return grad, _newton_direction(grad, H, F, diagnostics)

    if not np.isfinite(objective(beta_start)):
        raise InfeasibleCutsError("beta M-step started from an infeasible point")
    beta, _ = _ascend(beta_start, objective, derivatives)
    return beta


def m_step_gamma(counts: ExpectedCounts, design: Design, gamma_start, diagnostics=None) -> np.ndarray:
    """Maximize the expected transition term over gamma (tiny ridge keeps it finite)."""
    layout = design.layout
    gamma_start = np.asarray(gamma_start, dtype=np.float64)
    if layout.config.k == 1:
        return gamma_start
    x, w = _transition_rows(design, counts)
    if x.shape[0] == 0:
        if diagnostics is not None:
            diagnostics["NO_TRANSITIONS"] += 1
        return gamma_start
    shape = gamma_start.shape

    stats = TransitionStats.build(x, w, layout)

    def plain(g):
        return _gamma_value(g.reshape(shape), stats)

    def objective(g):
        return plain(g) - GAMMA_RIDGE * float(g @ g)

    def derivatives(g):
        grad, H = gamma_derivatives(g.reshape(shape), x, w, layout, stats=stats)
        grad = grad - 2 * GAMMA_RIDGE * g
        H = H - 2 * GAMMA_RIDGE * np.eye(len(g))
        return grad, _newton_direction(grad, H, None, diagnostics)

    g0 = gamma_start.ravel()
    g, _ = _ascend(g0, objective, derivatives)
    # The ridge may trade a sliver of likelihood for a smaller norm; EM needs pure ascent.
    if plain(g) < plain(g0):
        return gamma_start
    return g.reshape(shape)


def pava(values, weights) -> np.ndarray:
    """Weighted isotonic (nondecreasing) regression by pooling adjacent violators."""
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    means, wts, sizes = [], [], []
    for v, w in zip(values, weights):
        means.append(v)
        wts.append(w)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            w_new = wts[-2] + wts[-1]
            m_new = (wts[-2] * means[-2] + wts[-1] * means[-1]) / w_new
            size = sizes[-2] + sizes[-1]
            del means[-1], wts[-1], sizes[-1]
            means[-1], wts[-1], sizes[-1] = m_new, w_new, size
    return np.repeat(means, sizes)


def m_step_lambda(counts: ExpectedCounts, panel: PanelData, k: int, lam_prev=None,
                  diagnostics=None) -> np.ndarray:
    """Monotone weighted Bernoulli MLE of the item probabilities."""
    y = panel.arrays.y
    n_c = counts.post.sum(axis=0)
    ones = y.T @ counts.post
    live = n_c >= EMPTY_STATE_WEIGHT
    if not live.all() and diagnostics is not None:
        diagnostics["EMPTY_STATE"] += 1
    J = y.shape[1]
    lam = np.empty((J, k))
    if lam_prev is None:
        lam_prev = np.tile(np.linspace(0.25, 0.75, k), (J, 1))
    for j in range(J):
        fitted = pava(ones[j, live] / n_c[live], n_c[live])
        row = np.array(lam_prev[j], dtype=np.float64)
        row[live] = fitted
        # Empty states carry no weight; keep their old value squeezed between neighbours.
        for c in np.flatnonzero(~live):
            lo = max([row[d] for d in range(c) if live[d]], default=0.0)
            hi = min([row[d] for d in range(c + 1, k) if live[d]], default=1.0)
            row[c] = min(max(row[c], lo), hi)
        lam[j] = np.clip(row, 0.0, 1.0)
    return lam


def m_step(theta: Parameters, counts: ExpectedCounts, panel: PanelData, design: Design,
           diagnostics=None) -> Parameters:
    k = design.layout.config.k
    return Parameters(
        m_step_beta(counts, design, theta.beta, diagnostics),
        m_step_gamma(counts, design, theta.gamma, diagnostics),
        m_step_lambda(counts, panel, k, theta.lam, diagnostics),
    )


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _intercept_mask(columns) -> np.ndarray:
    return np.array([c == "intercept" or c.startswith("facility_") for c in columns])


def _random_slopes(rng, x: np.ndarray, columns) -> np.ndarray:
    """N(0, 0.25) effects on the scale of each covariate, centred on the intercepts."""
    coef = rng.normal(0.0, 0.5, size=len(columns))
    icpt = _intercept_mask(columns)
    if x.shape[0] and (~icpt).any():
        sd = x[:, ~icpt].std(axis=0)
        sd[sd == 0] = 1.0
        coef[~icpt] /= sd
        coef[icpt] -= float(x[:, ~icpt].mean(axis=0) @ coef[~icpt])
    return coef


def random_start(panel: PanelData, design: Design, rng) -> Parameters:
    layout = design.layout
    k = layout.config.k
    lam = np.sort(rng.uniform(0.05, 0.95, size=(panel.n_items, k)), axis=1)
    if k == 1:
        return Parameters(np.zeros(0), np.zeros(layout.gamma_shape), lam)
    cuts = -np.sort(np.abs(rng.normal(size=layout.n_cuts)))
    beta = np.concatenate([cuts, _random_slopes(rng, design.x_init, layout.init_columns)])
    x_t = design.x_trans[~panel.arrays.first]
    gamma = np.array([_random_slopes(rng, x_t, layout.trans_columns) for _ in range(layout.n_blocks)])
    return Parameters(beta, gamma.reshape(layout.gamma_shape), lam)


def deterministic_start(panel: PanelData, design: Design) -> Parameters:
    layout = design.layout
    k = layout.config.k
    a = panel.arrays
    lengths = np.diff(a.offsets)
    score = np.add.reduceat(a.y.mean(axis=1), a.offsets[:-1]) / lengths
    rank = np.empty(len(score), dtype=np.int64)
    rank[np.argsort(score, kind="stable")] = np.arange(len(score))
    group = np.minimum(rank * k // len(score), k - 1)
    occ_group = group[a.subject_of]
    lam = np.empty((panel.n_items, k))
    size = np.bincount(occ_group, minlength=k).astype(np.float64)
    for j in range(panel.n_items):
        ones = np.bincount(occ_group, weights=a.y[:, j], minlength=k)
        with np.errstate(invalid="ignore"):
            means = np.where(size > 0, ones / np.maximum(size, 1), a.y[:, j].mean())
        lam[j] = pava(means, np.maximum(size, 1e-9))
    lam = np.clip(lam, 0.02, 0.98)
    if k == 1:
        return Parameters(np.zeros(0), np.zeros(layout.gamma_shape), lam)
    frac = np.bincount(group, minlength=k).astype(np.float64)
    frac = np.maximum(frac, 0.5) / max(frac.sum(), 1.0)
    frac /= frac.sum()
    head = np.cumsum(frac)[:-1]
    eta = np.log1p(-head) - np.log(head)
    slopes = np.where(_intercept_mask(layout.init_columns), eta[0], 0.0)
    beta = np.concatenate([eta[1:] - eta[0], slopes])
    return Parameters(beta, np.zeros(layout.gamma_shape), lam)


def _em_iterations(theta, panel, design, n_iter, diagnostics):
    config = design.layout.config
    for _ in range(n_iter):
        counts, _ = e_step(theta, panel, config, design)
        theta = m_step(theta, counts, panel, design, diagnostics)
    return theta, e_step(theta, panel, config, design)[1]


def multi_start_init(panel: PanelData, config: ModelConfig, settings: FitSettings,
                     design: Design | None = None, diagnostics=None):
    """Best of one deterministic and ``n_starts`` random starts after a few EM steps.

    Returns ``(theta, warm_logliks)``; start ``s`` draws from the stream
    ``default_rng([seed, s])``; index 0 of ``warm_logliks`` is the
    deterministic start and rejected starts appear as ``-inf``.
    """
    design = design or build_design(panel, config)
    diagnostics = diagnostics if diagnostics is not None else Counter()
    candidates = [deterministic_start(panel, design)]
    for s in range(settings.n_starts):
        candidates.append(random_start(panel, design, np.random.default_rng([settings.seed, s])))
    best, best_ll, lls = None, -math.inf, []
    for theta in candidates:
        try:
            theta, ll = _em_iterations(theta, panel, design, settings.warm_iters, diagnostics)
        except NumericalError as exc:
            log.debug("start rejected: %s", exc)
            diagnostics["REJECTED_START"] += 1
            lls.append(-math.inf)
            continue
        lls.append(ll)
        if ll > best_ll:
            best, best_ll = theta, ll
    if best is None:
        raise NumericalError("every starting point has zero likelihood", "ALL_STARTS_FAILED")
    return best, lls


def fit(panel: PanelData, config: ModelConfig, settings: FitSettings | None = None,
        init: Parameters | None = None) -> FitResult:
    """Maximum likelihood fit by EM."""
    settings = settings or FitSettings()
    design = build_design(panel, config)
    layout = design.layout
    v = count_parameters(config, panel.n_items, panel.n_facilities)
    diagnostics = Counter()

    if config.k == 1:
        lam = panel.arrays.y.mean(axis=0)[:, None]
        theta = Parameters(np.zeros(0), np.zeros(layout.gamma_shape), lam)
        ll = independence_loglik(panel)
        return FitResult(theta, ll, 1, True, v, [ll], [], config, layout, diagnostics)

    if init is None:
        theta, start_lls = multi_start_init(panel, config, settings, design, diagnostics)
    else:
        layout.check(init)
        theta, start_lls = init, []

    trace = []
    converged = False
    counts, ll = e_step(theta, panel, config, design)
    trace.append(ll)
    while len(trace) <= settings.max_iter:
        new_theta = m_step(theta, counts, panel, design, diagnostics)
        new_counts, new_ll = e_step(new_theta, panel, config, design)
        if new_ll < ll - 1e-9:
            diagnostics["LOGLIK_DECREASE"] += 1
        theta, counts = new_theta, new_counts
        trace.append(new_ll)
        if abs(new_ll - ll) / (1.0 + abs(new_ll)) < settings.tol:
            converged = True
            ll = new_ll
            break
        ll = new_ll
    return FitResult(theta, ll, len(trace) - 1, converged, v, trace, start_lls, config, layout,
                     diagnostics)
