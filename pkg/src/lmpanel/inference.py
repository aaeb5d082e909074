"""Score, observed information, standard errors and Wald tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import norm

from .em import (ExpectedCounts, TransitionStats, _transition_rows, beta_derivatives,
                 e_step, gamma_derivatives, lambda_gradient)
from .errors import NumericalError
from .model import Design, Layout, ModelConfig, PanelData, Parameters, build_design

log = logging.getLogger(__name__)


class WaldRow(NamedTuple):
    estimate: float
    se: float
    z: float
    p: float


@dataclass(eq=False)
class InferenceResult:
    se: np.ndarray            # aligned to the flattened parameter vector; nan where undefined
    cov: np.ndarray           # (v, v); nan rows/columns for excluded coordinates
    wald_z: np.ndarray
    p_values: np.ndarray
    info_condition: float
    free: np.ndarray          # bool mask of differentiated coordinates
    names: list
    asymmetry: float = 0.0
    warnings: list = field(default_factory=list)

    def table(self, theta: Parameters) -> list[WaldRow]:
        return wald_table(theta.flatten(), self.se)


def step_sizes(vec) -> np.ndarray:
    return np.maximum(1e-5, 1e-4 * np.abs(np.asarray(vec)))


def free_coordinates(theta: Parameters, layout: Layout) -> np.ndarray:
    """Coordinates differentiated for inference; boundary item probabilities are held fixed."""
    vec = theta.flatten()
    free = np.ones(layout.size, dtype=bool)
    lam = vec[layout.slices["lambda"]]
    h = step_sizes(lam)
    free[layout.slices["lambda"]] = (lam > h) & (lam < 1.0 - h)
    return free


def score_from_counts(theta: Parameters, counts: ExpectedCounts, panel: PanelData,
                      design: Design) -> np.ndarray:
    """Gradient of the expected complete-data log-likelihood at its own parameters."""
    k = design.layout.config.k
    parts = []
    if k >= 2:
        parts.append(beta_derivatives(theta.beta, counts.w1, design.x_init, k, hessian=False))
        x, w = _transition_rows(design, counts)
        if x.shape[0]:
            stats = TransitionStats.build(x, w, design.layout)
            parts.append(gamma_derivatives(theta.gamma, x, w, design.layout, hessian=False, stats=stats))
        else:
            parts.append(np.zeros(theta.gamma.size))
    parts.append(lambda_gradient(theta.lam, counts, panel).ravel())
    return np.concatenate(parts)


def score_vector(theta: Parameters, panel: PanelData, config: ModelConfig,
                 design: Design | None = None) -> np.ndarray:
    """Observed-data score by the Fisher identity; nan at boundary item probabilities."""
    design = design or build_design(panel, config)
    counts, _ = e_step(theta, panel, config, design)
    s = score_from_counts(theta, counts, panel, design)
    lam_slice = design.layout.slices["lambda"]
    lam = theta.lam.ravel()
    s[lam_slice] = np.where((lam > 0) & (lam < 1), s[lam_slice], np.nan)
    return s


def numerical_jacobian(fn: Callable[[np.ndarray], np.ndarray], vec, free, steps=None,
                       extrapolate: bool = True) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` with respect to the free coordinates.

    With ``extrapolate`` the differences at ``h`` and ``h/2`` are combined by
    one Richardson step, which cancels the O(h^2) truncation term.  That term
    dominates along slopes of raw-scale covariates (ages, day gaps).
    """
    vec = np.asarray(vec, dtype=np.float64)
    idx = np.flatnonzero(free)
    steps = step_sizes(vec) if steps is None else np.asarray(steps, dtype=np.float64)

    def central(j, h):
        up, down = vec.copy(), vec.copy()
        up[j] += h
        down[j] -= h
        return (np.asarray(fn(up))[idx] - np.asarray(fn(down))[idx]) / (2 * h)

    jac = np.empty((len(idx), len(idx)))
    for col, j in enumerate(idx):
        d1 = central(j, steps[j])
        jac[:, col] = (4 * central(j, steps[j] / 2) - d1) / 3 if extrapolate else d1
    return jac


def observed_information(theta: Parameters, panel: PanelData | None, config: ModelConfig | None,
                         score_fn: Callable | None = None, free=None, layout: Layout | None = None,
                         return_raw: bool = False):
    """Minus the numerical derivative of the score, symmetrized.

    ``score_fn`` maps a flat parameter vector to a score vector and replaces
    the model score when given (used to check the differencing on known
    functions).  Returns a (v, v) array with nan rows/columns outside ``free``.
    """
    vec = theta.flatten() if isinstance(theta, Parameters) else np.asarray(theta, dtype=np.float64)
    if score_fn is None:
        design = build_design(panel, config)
        layout = design.layout

        def score_fn(v):
            t = layout.unflatten(v)
            counts, _ = e_step(t, panel, config, design)
            return score_from_counts(t, counts, panel, design)

        if free is None:
            free = free_coordinates(theta, layout)
    if free is None:
        free = np.ones(len(vec), dtype=bool)
    free = np.asarray(free, dtype=bool)
    raw = -numerical_jacobian(score_fn, vec, free)
    sym = 0.5 * (raw + raw.T)
    full = np.full((len(vec), len(vec)), np.nan)
    idx = np.flatnonzero(free)
    full[np.ix_(idx, idx)] = sym
    if return_raw:
        return full, raw
    return full


def wald_table(estimate, se) -> list[WaldRow]:
    """Two-sided Wald tests of each coordinate against zero, normal reference."""
    est = np.atleast_1d(np.asarray(estimate, dtype=np.float64))
    se = np.atleast_1d(np.asarray(se, dtype=np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(est == 0, 0.0, est / se)
    p = 2.0 * norm.sf(np.abs(z))
    return [WaldRow(float(a), float(b), float(c), float(d)) for a, b, c, d in zip(est, se, z, p)]


def infer(theta: Parameters, panel: PanelData, config: ModelConfig,
          item_labels=None) -> InferenceResult:
    """Standard errors from the inverse observed information."""
    design = build_design(panel, config)
    layout = design.layout
    free = free_coordinates(theta, layout)
    warnings = []
    try:
        info, raw = observed_information(theta, panel, config, free=free, return_raw=True)
    except NumericalError as exc:
        # A perturbation left the feasible region (e.g. a cut shift sitting at zero).
        warnings.append(f"information not computed: {exc}")
        v = layout.size
        nan = np.full(v, np.nan)
        return InferenceResult(nan, np.full((v, v), np.nan), nan, nan, np.inf, np.zeros(v, bool),
                               layout.names(item_labels or panel.item_labels), warnings=warnings)
    idx = np.flatnonzero(free)
    sub = info[np.ix_(idx, idx)]
    # asymmetry of the unsymmetrized matrix, relative to its largest entry
    scale = float(np.max(np.abs(raw))) if raw.size else 0.0
    asym = float(np.max(np.abs(raw - raw.T))) / scale if scale > 0 else 0.0
    evals, evecs = np.linalg.eigh(sub)
    top = float(np.max(np.abs(evals))) if evals.size else 0.0
    good = evals > 1e-10 * top
    cond = float(top / evals.min()) if evals.size and evals.min() > 0 else np.inf
    inv = (evecs[:, good] / evals[good]) @ evecs[:, good].T
    undefined = np.zeros(len(idx), dtype=bool)
    if not good.all():
        warnings.append("NOT_POS_DEFINITE: observed information has non-positive or tiny eigenvalues")
        undefined = (evecs[:, ~good] ** 2).sum(axis=1) > 1e-6
    v = layout.size
    cov = np.full((v, v), np.nan)
    cov[np.ix_(idx, idx)] = 0.5 * (inv + inv.T)
    diag = np.diag(cov).copy()
    diag[idx[undefined]] = np.nan
    with np.errstate(invalid="ignore"):
        se = np.where(diag >= 0, np.sqrt(np.where(diag >= 0, diag, 0.0)), np.nan)
    est = theta.flatten()
    rows = wald_table(est, se)
    return InferenceResult(se, cov, np.array([r.z for r in rows]), np.array([r.p for r in rows]),
                           cond, free, layout.names(item_labels or panel.item_labels),
                           asymmetry=asym, warnings=warnings)
