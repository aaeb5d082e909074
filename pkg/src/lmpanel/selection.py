"""Fit indices and the backward model-selection strategy."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .em import FitResult, FitSettings, e_step, fit
from .errors import LMError
from .likelihood import independence_loglik
from .model import (INIT_COVARIATES, SHARED_UPDOWN, TRANS_COVARIATES, UNRESTRICTED_TRIDIAG,
                    ModelConfig, PanelData)

log = logging.getLogger(__name__)


def bic(loglik: float, v: int, n: int) -> float:
    """-2 loglik + v log n, with n the number of subjects."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return -2.0 * loglik + v * math.log(n)


def r_squared(loglik: float, loglik0: float, n: int, n_items: int) -> float:
    """Average per-response improvement over the independence model."""
    return 1.0 - math.exp(2.0 * (loglik0 - loglik) / (n * n_items))


def s_index(posteriors, k: int) -> float | None:
    """Classification index from per-occasion posterior state probabilities; None when k = 1."""
    if k == 1:
        return None
    post = np.asarray(posteriors, dtype=np.float64).reshape(-1, k)
    r_star = post.max(axis=1)
    return float(np.sum(r_star - 1.0 / k) / ((1.0 - 1.0 / k) * len(r_star)))


@dataclass(eq=False)
class SelectionRow:
    label: str
    config: ModelConfig
    v: int | None = None
    loglik: float | None = None
    bic: float | None = None
    r2: float | None = None
    s_index: float | None = None
    error: str | None = None
    fit: FitResult | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.config.k

    def to_dict(self) -> dict:
        return {"model_label": self.label, "k": self.k, "v": self.v, "loglik": self.loglik,
                "bic": self.bic, "r2": self.r2, "s_index": self.s_index, "error": self.error,
                "config": self.config.to_dict()}


@dataclass(eq=False)
class SelectionReport:
    rows: list
    chosen_model: str | None

    @property
    def chosen(self) -> SelectionRow | None:
        return next((r for r in self.rows if r.label == self.chosen_model), None)

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "chosen_model": self.chosen_model}


def fit_row(label: str, panel: PanelData, config: ModelConfig, settings: FitSettings,
            loglik0: float) -> SelectionRow:
    row = SelectionRow(label, config)
    try:
        res = fit(panel, config, settings)
    except LMError as exc:
        log.warning("fit of %s failed: %s", label, exc)
        row.error = str(exc)
        return row
    n = panel.n_subjects
    row.fit = res
    row.v = res.v
    row.loglik = res.loglik
    row.bic = bic(res.loglik, res.v, n)
    row.r2 = r_squared(res.loglik, loglik0, n, panel.n_items)
    if config.k > 1:
        counts, _ = e_step(res.theta_hat, panel, config)
        row.s_index = s_index(counts.post, config.k)
    log.info("%s: loglik=%.3f v=%d BIC=%.3f", label, row.loglik, row.v, row.bic)
    return row


def _best(rows):
    ok = [r for r in rows if r.bic is not None]
    return min(ok, key=lambda r: r.bic) if ok else None


def _fit_rows(jobs, panel, settings, loglik0, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            futures = [pool.submit(fit_row, label, panel, cfg, settings, loglik0) for label, cfg in jobs]
            return [f.result() for f in futures]
    return [fit_row(label, panel, cfg, settings, loglik0) for label, cfg in jobs]


def backward_select(panel: PanelData, k_max: int, settings: FitSettings | None = None,
                    base: ModelConfig | None = None, workers: int = 1,
                    restrict: bool = True) -> SelectionReport:
    """Choose k under the unrestricted model, then simplify transitions and covariates.

    The single-drop candidates are independent and run in ``workers``
    processes when more than one is allowed; results do not depend on it.
    With ``restrict=False`` the search stops once k is chosen; the later
    stages never change k.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    settings = settings or FitSettings()
    base = base or ModelConfig(1, UNRESTRICTED_TRIDIAG)
    loglik0 = independence_loglik(panel)
    rows = []

    m1_rows = []
    for k in range(1, k_max + 1):
        cfg = ModelConfig(k, UNRESTRICTED_TRIDIAG, base.init_covariates, base.trans_covariates)
        row = fit_row(f"M1(k={k})", panel, cfg, settings, loglik0)
        rows.append(row)
        if row.bic is None:
            continue
        prev = _best(m1_rows)
        m1_rows.append(row)
        if prev is not None and row.bic > prev.bic:
            break
    best_m1 = _best(m1_rows)
    if best_m1 is None:
        return SelectionReport(rows, None)
    k = best_m1.k

    # With one state there are no transition or initial-state parameters to restrict.
    if restrict and k >= 2:
        m2_cfg = ModelConfig(k, SHARED_UPDOWN, base.init_covariates, base.trans_covariates)
        m2 = fit_row("M2", panel, m2_cfg, settings, loglik0)
        rows.append(m2)
        if m2.bic is not None:
            improving = []
            drops = [f"init:{c}" for c in INIT_COVARIATES if c in m2_cfg.init_covariates]
            drops += [f"trans:{c}" for c in TRANS_COVARIATES if c in m2_cfg.trans_covariates]
            jobs = [(f"M2-{spec}", m2_cfg.drop([spec])) for spec in drops]
            for spec, row in zip(drops, _fit_rows(jobs, panel, settings, loglik0, workers)):
                rows.append(row)
                if row.bic is not None and row.bic < m2.bic:
                    improving.append(spec)
            if len(improving) > 1:
                label = "M2-" + "-".join(improving)
                rows.append(fit_row(label, panel, m2_cfg.drop(improving), settings, loglik0))

    chosen = _best(rows)
    return SelectionReport(rows, chosen.label)
