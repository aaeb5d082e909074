"""Acceptance criteria 1-11; each test records one PASS/FAIL line for the run summary."""

import time

import numpy as np
import pytest

from lmpanel.em import FitSettings, e_step, fit, m_step_lambda
from lmpanel.inference import infer, wald_table
from lmpanel.likelihood import evaluate
from lmpanel.model import SHARED_UPDOWN, UNRESTRICTED_TRIDIAG, Layout, ModelConfig, count_parameters
from lmpanel.scoring import facility_contrasts, facility_dummy_index, score_facilities
from lmpanel.selection import backward_select, bic, r_squared
from lmpanel.simulate import SimDesign, simulate_panel

from helpers import (RECOVERY_BETA, RECOVERY_GAMMA, RECOVERY_LAMBDA, brute_force_subject,
                     gradient_relative_error, grid_monotone_max, model_inputs, random_config,
                     random_panel, random_theta, recovery_design, simulated)
from published import (FACILITY_SCORES, LOGLIK0, N_FACILITIES, N_ITEMS, N_SUBJECTS, SELECTION_ROWS,
                       UNIDIMENSIONAL)
from test_model import M1_COUNTS, M2_M10

# (theta_hat, cov, panel, config) of every fit scored in this module, for criterion 11
FITTED = []


def test_criterion_1_parameter_counts(acceptance):
    got = [count_parameters(ModelConfig(k, UNRESTRICTED_TRIDIAG), N_ITEMS, N_FACILITIES)
           for k in range(1, 9)]
    got += [count_parameters(ModelConfig(7, SHARED_UPDOWN).drop(d), N_ITEMS, N_FACILITIES)
            for d, _ in M2_M10.values()]
    want = M1_COUNTS + [v for _, v in M2_M10.values()]
    ok = got == want
    acceptance(1, ok, f"{sum(a == b for a, b in zip(got, want))}/{len(want)} counts match")
    assert ok


def test_criterion_2_bic(acceptance):
    err = {label: abs(bic(ll, v, N_SUBJECTS) - b) for label, (_, v, ll, b, _) in SELECTION_ROWS.items()}
    worst = max(err, key=err.get)
    ok = err[worst] <= 2
    acceptance(2, ok, f"{len(err)} rows, max |error| {err[worst]:.2f} ({worst})")
    assert ok


def test_criterion_3_r2(acceptance):
    a = r_squared(-14875, LOGLIK0, N_SUBJECTS, N_ITEMS)
    b = r_squared(-15188, LOGLIK0, N_SUBJECTS, N_ITEMS)
    ok = abs(a - 0.928) <= 1e-3 and abs(b - 0.923) <= 1e-3
    acceptance(3, ok, f"R2 = {a:.4f} (0.928), {b:.4f} (0.923)")
    assert ok


def test_criterion_4_score_arithmetic(acceptance):
    diffs = [abs((a1 - a2) - u) for (a1, a2), u in zip(FACILITY_SCORES, UNIDIMENSIONAL)]
    z = wald_table([-0.947], [0.379])[0].z
    # both columns are printed to three decimals, so the difference can be off by 0.002
    ok = max(diffs) <= 0.002 + 1e-9 and abs(z - (-2.50)) <= 0.01
    acceptance(4, ok, f"max |a1 - a2 - a_bar| {max(diffs):.4f} over 11 facilities; z = {z:.3f}")
    assert ok


def test_criterion_5_recursions_vs_enumeration(acceptance):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        cfg = random_config(rng, k=int(rng.integers(1, 4)))
        panel = random_panel(rng, n=int(rng.integers(1, 4)), T=(1, 5), J=int(rng.integers(1, 4)))
        theta = random_theta(rng, Layout(cfg, panel.n_items, panel.n_facilities))
        ev = evaluate(theta, panel, cfg)
        off = panel.arrays.offsets
        for i, (pi, trans, y) in enumerate(model_inputs(theta, panel, cfg)):
            ll, marg, pair = brute_force_subject(pi, trans, theta.lam, y)
            worst = max(worst, abs(ev.loglik_i[i] - ll) / max(1.0, abs(ll)),
                        np.max(np.abs(ev.post[off[i]:off[i + 1]] - marg)),
                        np.max(np.abs(ev.pair[off[i] + 1:off[i + 1]] - pair), initial=0.0))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 10
    acceptance(5, ok, f"200 instances, max relative error {worst:.1e}, {elapsed:.1f} s")
    assert ok


def test_criterion_6_em_monotone(acceptance):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        cfg = random_config(rng, k=int(rng.integers(2, 4)))
        H = int(rng.integers(1, 4))
        J = int(rng.integers(2, 6))
        truth = random_theta(rng, Layout(cfg, J, H))
        panel, _ = simulate_panel(SimDesign(150, H, J, cfg, truth, n_occasions=(2, 6),
                                            gap_days=(30, 180), seed=seed))
        res = fit(panel, cfg, FitSettings(n_starts=2, seed=seed, max_iter=2000))
        worst = max(worst, -np.min(np.diff(res.loglik_trace), initial=0.0))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 120
    acceptance(6, ok, f"20 fits, largest decrease {max(worst, 0.0):.1e}, {elapsed:.1f} s")
    assert ok


def test_criterion_7_gradient_check(acceptance):
    start = time.perf_counter()
    errors = [gradient_relative_error(2000 + seed) for seed in range(30)]
    elapsed = time.perf_counter() - start
    ok = max(errors) < 1e-4 and elapsed < 60
    acceptance(7, ok, f"30 draws, max relative error {max(errors):.1e}, {elapsed:.1f} s")
    assert ok


def test_criterion_8_lambda_m_step_oracle(acceptance):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(3000 + seed)
        cfg = random_config(rng, k=int(rng.integers(1, 4)))
        panel = random_panel(rng, n=int(rng.integers(5, 30)), T=(1, 5), J=int(rng.integers(1, 4)))
        theta = random_theta(rng, Layout(cfg, panel.n_items, panel.n_facilities))
        counts, _ = e_step(theta, panel, cfg)
        lam = m_step_lambda(counts, panel, cfg.k)
        y = panel.arrays.y
        s1 = y.T @ counts.post
        s0 = (1 - y).T @ counts.post
        for j in range(panel.n_items):
            worst = max(worst, np.max(np.abs(lam[j] - grid_monotone_max(s1[j], s0[j]))))
    elapsed = time.perf_counter() - start
    ok = worst <= 2e-3 and elapsed < 60
    acceptance(8, ok, f"50 instances, max |PAVA - grid| {worst:.1e}, {elapsed:.1f} s")
    assert ok


def test_criterion_9_parameter_recovery(acceptance):
    start = time.perf_counter()
    truth = np.concatenate([np.ravel(RECOVERY_BETA), np.ravel(RECOVERY_GAMMA)])
    lam_ok, covered, total = 0, 0, 0
    for seed in range(20):
        panel, _ = simulated(seed)
        cfg = recovery_design(seed).config
        res = fit(panel, cfg, FitSettings(seed=seed))
        inf = infer(res.theta_hat, panel, cfg)
        lam_ok += np.max(np.abs(res.theta_hat.lam - np.array(RECOVERY_LAMBDA))) <= 0.05
        est = res.theta_hat.flatten()[:len(truth)]
        se = inf.se[:len(truth)]
        covered += int(np.sum(np.abs(est - truth) <= 3 * se))
        total += len(truth)
        FITTED.append((res.theta_hat, inf.cov, panel, cfg))
    elapsed = time.perf_counter() - start
    ok = lam_ok >= 18 and covered >= 0.95 * total and elapsed < 600
    acceptance(9, ok, f"lambda within 0.05 in {lam_ok}/20 runs; beta/gamma within 3 SE for "
                      f"{covered}/{total} ({covered / total:.1%}); {elapsed:.0f} s")
    assert ok


def test_criterion_10_bic_order_consistency(acceptance):
    # The restricted-model stage of the backward search never changes k, so the
    # search stops once k is chosen; five random starts keep the run in budget.
    start = time.perf_counter()
    hits = {}
    for k in (1, 3):
        hits[k] = 0
        for seed in range(20):
            panel, _ = simulated(100 + seed, k=k)
            rep = backward_select(panel, 5, FitSettings(n_starts=5, seed=seed), restrict=False)
            hits[k] += rep.chosen.k == k
    elapsed = time.perf_counter() - start
    ok = hits[1] >= 18 and hits[3] >= 16 and elapsed < 900
    acceptance(10, ok, f"k=1 recovered {hits[1]}/20, k=3 recovered {hits[3]}/20, {elapsed:.0f} s")
    assert ok


def _own_fit():
    panel, _ = simulated(77, n=400)
    cfg = recovery_design(77).config
    res = fit(panel, cfg, FitSettings(n_starts=3, seed=77))
    return res.theta_hat, infer(res.theta_hat, panel, cfg).cov, panel, cfg


def test_criterion_11_zero_sum_and_invariance(acceptance):
    fits = FITTED or [_own_fit()]
    worst_sum, worst_shift = 0.0, 0.0
    for theta, cov, panel, cfg in fits:
        rep = score_facilities(theta, cov, panel, cfg)
        worst_sum = max(worst_sum, abs(rep.a1.sum()), abs(rep.a2.sum()), abs(rep.a_bar.sum()))
        idx = facility_dummy_index(Layout(cfg, panel.n_items, panel.n_facilities))
        layout = Layout(cfg, panel.n_items, panel.n_facilities)
        for c in (0.7, -3.1):
            vec = theta.flatten()
            vec[idx[0]] += c
            vec[idx[1]] -= c
            moved = facility_contrasts(layout.unflatten(vec), cov, cfg, panel.n_items, panel.n_facilities)
            worst_shift = max(worst_shift, np.max(np.abs(moved.a1 - rep.a1)),
                              np.max(np.abs(moved.a2 - rep.a2)),
                              np.max(np.abs(moved.cov2 - rep.cov2)))
    ok = worst_sum < 1e-10 and worst_shift < 1e-12
    acceptance(11, ok, f"{len(fits)} fitted reports, max |sum| {worst_sum:.1e}, "
                       f"max change under a common shift {worst_shift:.1e}")
    assert ok
