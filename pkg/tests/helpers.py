"""Random instances and independent reference implementations used by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np

from lmpanel.inference import score_vector
from lmpanel.likelihood import log_likelihood
from lmpanel.links import initial_probs_batch, transition_matrices
from lmpanel.model import (INIT_COVARIATES, SHARED_UPDOWN, TRANS_COVARIATES, UNRESTRICTED_TRIDIAG,
                           Layout, ModelConfig, Occasion, Parameters, SubjectRecord, build_design,
                           validate_panel)
from lmpanel.simulate import SimDesign, simulate_panel

# recovery design shared by the recovery, selection and end-to-end tests
RECOVERY_BETA = [-1.5, 0.3, 0.03, -2.2, -2.6, -2.4]
RECOVERY_GAMMA = [[0.2, 0.01, 0.005, -3.2, -2.8, -2.5],
                  [-0.1, 0.02, 0.004, -3.6, -3.2, -3.4]]
RECOVERY_LAMBDA = [[0.10, 0.50, 0.90], [0.05, 0.40, 0.85], [0.20, 0.60, 0.95],
                   [0.10, 0.30, 0.80], [0.15, 0.70, 0.90], [0.05, 0.20, 0.60]]


def recovery_design(seed: int, n: int = 1000, k: int = 3) -> SimDesign:
    if k == 3:
        cfg = ModelConfig(3, SHARED_UPDOWN)
        theta = Parameters(RECOVERY_BETA, RECOVERY_GAMMA, RECOVERY_LAMBDA)
    elif k == 1:
        cfg = ModelConfig(1, SHARED_UPDOWN)
        theta = Parameters(np.zeros(0), np.zeros((0, 6)), [[0.3], [0.1], [0.5], [0.2], [0.4], [0.15]])
    else:
        raise ValueError(k)
    return SimDesign(n, 3, 6, cfg, theta, n_occasions=8, gap_days=(60, 120), seed=seed)


def random_panel(rng, n=5, T=(1, 5), J=3, H=2, p_one=0.4):
    """Small panel with random covariates and responses."""
    subjects = []
    for i in range(n):
        Ti = int(rng.integers(T[0], T[1] + 1))
        age = 70.0 + 20.0 * rng.random()
        occ = []
        for t in range(Ti):
            gap = 0.0 if t == 0 else float(rng.integers(20, 200))
            age += gap / 365.25
            occ.append(Occasion(age, gap, tuple(int(v) for v in rng.random(J) < p_one)))
        fac = int(rng.integers(H))
        subjects.append(SubjectRecord(f"s{i}", int(rng.integers(2)),
                                      tuple(int(h == fac) for h in range(H)), tuple(occ)))
    return validate_panel(subjects, n_items=J, n_facilities=H)


def random_config(rng, k=None, mode=None):
    k = int(rng.integers(1, 4)) if k is None else k
    mode = mode or (SHARED_UPDOWN if rng.random() < 0.5 else UNRESTRICTED_TRIDIAG)
    init = frozenset(c for c in INIT_COVARIATES if rng.random() < 0.7)
    trans = frozenset(c for c in TRANS_COVARIATES if rng.random() < 0.7)
    return ModelConfig(k, mode, init, trans)


def random_theta(rng, layout: Layout, slope_scale=0.3, lam_range=(0.05, 0.95)):
    """Interior parameters: decreasing cut shifts, small slopes, ordered item probabilities."""
    k = layout.config.k
    beta = np.zeros(layout.n_beta)
    if k >= 2:
        beta[: layout.n_cuts] = -np.cumsum(0.3 + rng.random(layout.n_cuts))
        slopes = rng.normal(0.0, slope_scale, layout.n_beta - layout.n_cuts)
        for j, name in enumerate(layout.init_columns):
            if name == "age":
                slopes[j] *= 0.02
        beta[layout.n_cuts:] = slopes
    gamma = rng.normal(0.0, slope_scale, layout.gamma_shape)
    for j, name in enumerate(layout.trans_columns):
        if name == "age":
            gamma[:, j] *= 0.02
        elif name == "time_gap":
            gamma[:, j] *= 0.005
    lam = np.sort(rng.uniform(*lam_range, size=(layout.n_items, k)), axis=1)
    return Parameters(beta, gamma, lam)


def model_inputs(theta, panel, config):
    """Per-subject (pi, [transition matrices], y) from the link functions."""
    design = build_design(panel, config)
    pi = initial_probs_batch(theta.beta, design.x_init, config.k)
    trans = transition_matrices(theta.gamma, design.x_trans, design.layout)
    off = panel.arrays.offsets
    y = panel.arrays.y
    out = []
    for i in range(panel.n_subjects):
        a, b = off[i], off[i + 1]
        out.append((pi[i], list(trans[a + 1:b]), y[a:b]))
    return out


def brute_force_subject(pi, trans, lam, y):
    """Enumerate every latent path: likelihood, state marginals and pair marginals."""
    lam = np.asarray(lam)
    T = y.shape[0]
    k = len(pi)
    probs = {}
    for path in itertools.product(range(k), repeat=T):
        p = pi[path[0]]
        for t in range(1, T):
            p *= trans[t - 1][path[t - 1], path[t]]
        for t in range(T):
            col = lam[:, path[t]]
            p *= float(np.prod(np.where(y[t] == 1, col, 1.0 - col)))
        probs[path] = p
    total = math.fsum(probs.values())
    marg = np.zeros((T, k))
    pair = np.zeros((max(T - 1, 0), k, k))
    for path, p in probs.items():
        for t in range(T):
            marg[t, path[t]] += p / total
        for t in range(1, T):
            pair[t - 1, path[t - 1], path[t]] += p / total
    return math.log(total), marg, pair


def grid_monotone_max(s1, s0, step=1e-3):
    """Best nondecreasing (lam_1..lam_k) on a grid for sum s1 log lam + s0 log(1 - lam).

    Dynamic programming over the grid: best_c(v) = f_c(v) + max_{u <= v} best_{c-1}(u).
    """
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    k = len(s1)

    def f(c):
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(s1[c] > 0, s1[c] * np.log(grid), 0.0)
            b = np.where(s0[c] > 0, s0[c] * np.log1p(-grid), 0.0)
        return a + b

    best = f(0)
    arg = []
    for c in range(1, k):
        run = np.empty_like(best)
        where = np.empty(len(grid), dtype=np.int64)
        top, pos = -np.inf, 0
        for i, v in enumerate(best):
            if v > top:
                top, pos = v, i
            run[i], where[i] = top, pos
        arg.append(where)
        best = f(c) + run
    # backtrack
    idx = int(np.argmax(best))
    out = [idx]
    for c in range(k - 1, 0, -1):
        idx = int(arg[c - 1][idx])
        out.append(idx)
    return grid[np.array(out[::-1])]


def naive_descriptive(panel):
    """Double-loop ā_h and s_h straight from the defining sums."""
    H = panel.n_facilities
    a_bar = [math.nan] * H
    s = [math.nan] * H
    for h in range(H):
        num, den = 0.0, 0
        diffs = []
        for subj in panel.subjects:
            if subj.facility_index != h or subj.n_occasions < 2:
                continue
            a = [100.0 * sum(o.responses) / panel.n_items for o in subj.occasions]
            for t in range(len(a) - 1):
                diffs.append(a[t + 1] - a[t])
                num += a[t + 1] - a[t]
                den += 1
        if den:
            a_bar[h] = num / den
            s[h] = math.sqrt(sum((d - a_bar[h]) ** 2 for d in diffs) / den)
    return np.array(a_bar), np.array(s)


def simulated(seed, **kw):
    return simulate_panel(recovery_design(seed, **kw))


def finite_difference_gradient(theta, panel, cfg, h=1e-5):
    """Central differences of the log-likelihood, one coordinate at a time."""
    lay = Layout(cfg, panel.n_items, panel.n_facilities)
    vec = theta.flatten()
    out = np.empty(len(vec))
    for j in range(len(vec)):
        up, down = vec.copy(), vec.copy()
        up[j] += h
        down[j] -= h
        out[j] = (log_likelihood(lay.unflatten(up), panel, cfg)
                  - log_likelihood(lay.unflatten(down), panel, cfg)) / (2 * h)
    return out


def gradient_relative_error(seed):
    """Largest score error against finite differences, relative to the largest gradient entry."""
    rng = np.random.default_rng(seed)
    cfg = random_config(rng)
    panel = random_panel(rng, n=int(rng.integers(3, 12)), T=(1, 5), J=int(rng.integers(1, 4)))
    theta = random_theta(rng, Layout(cfg, panel.n_items, panel.n_facilities))
    s = score_vector(theta, panel, cfg)
    fd = finite_difference_gradient(theta, panel, cfg)
    return float(np.max(np.abs(s - fd)) / max(1.0, np.max(np.abs(fd))))
