"""Facility performance scores: descriptive indices and model-based contrasts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .inference import WaldRow, wald_table
from .links import initial_probs_batch
from .model import SHARED_UPDOWN, Layout, ModelConfig, PanelData, Parameters, build_design

CHI2_2_95 = 5.991
Z_95 = 1.96
QUADRANTS = {(True, True): "Q1", (False, True): "Q2", (False, False): "Q3", (True, False): "Q4"}


@dataclass(frozen=True, eq=False)
class DescriptiveScores:
    a_bar: np.ndarray          # (H,) mean differential score; nan where undefined
    s: np.ndarray              # (H,) dispersion of differential scores
    n_transitions: np.ndarray  # (H,) number of differentials entering a_bar
    defined: np.ndarray        # (H,) bool

    def to_dict(self) -> dict:
        return {"a_bar": _nan_list(self.a_bar), "s": _nan_list(self.s),
                "n_transitions": self.n_transitions.tolist(), "defined": self.defined.tolist()}


def _nan_list(x):
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(x, dtype=float)]


def descriptive_scores(panel: PanelData) -> DescriptiveScores:
    """Per-facility mean and spread of occasion-to-occasion changes in the item percentage.

    Only subjects observed at least twice contribute.  With ``a_it`` the
    percentage of items equal to one, ``d_it = a_it - a_i,t-1`` and ``n_h``
    the facility's count of such differences::

        a_bar_h = sum d_it / n_h
        s_h     = sqrt(sum (d_it - a_bar_h)^2 / n_h)
    """
    H = panel.n_facilities
    arr = panel.arrays
    a = 100.0 * arr.y.sum(axis=1) / panel.n_items
    diff_ok = ~arr.first
    d = np.zeros_like(a)
    d[1:] = a[1:] - a[:-1]
    fac = arr.facility[arr.subject_of]
    n = np.bincount(fac[diff_ok], minlength=H).astype(np.int64)
    total = np.bincount(fac[diff_ok], weights=d[diff_ok], minlength=H)
    defined = n > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        a_bar = np.where(defined, total / np.maximum(n, 1), np.nan)
    dev = d - a_bar[fac]
    ss = np.bincount(fac[diff_ok], weights=dev[diff_ok] ** 2, minlength=H)
    s = np.where(defined, np.sqrt(ss / np.maximum(n, 1)), np.nan)
    return DescriptiveScores(a_bar, s, n, defined)


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    semi_axes: tuple   # major first
    angle: float       # radians, direction of the major axis from the a1 axis

    def to_dict(self) -> dict:
        return {"center": list(self.center), "semi_axes": list(self.semi_axes), "angle": self.angle}


def confidence_ellipse(center, cov2, level: float = CHI2_2_95) -> Ellipse:
    """Level set (x - c)' S^{-1} (x - c) = level of a 2x2 covariance."""
    cov2 = np.asarray(cov2, dtype=np.float64)
    evals, evecs = np.linalg.eigh(0.5 * (cov2 + cov2.T))
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    axes = np.sqrt(level * np.clip(evals, 0.0, None))
    v = evecs[:, 0]
    angle = math.atan2(v[1], v[0])
    # fold into (-pi/2, pi/2]: an axis has no direction
    if angle <= -math.pi / 2:
        angle += math.pi
    elif angle > math.pi / 2:
        angle -= math.pi
    return Ellipse((float(center[0]), float(center[1])), (float(axes[0]), float(axes[1])), angle)


def quadrant(a1: float, a2: float) -> str:
    """Q1 to Q4 counterclockwise in the (improvement, worsening) plane; points on an axis get "axis"."""
    if a1 == 0 or a2 == 0:
        return "axis"
    return QUADRANTS[(a1 > 0, a2 > 0)]


@dataclass(eq=False)
class FacilityScoreReport:
    a1: np.ndarray                  # (H,) improvement scores
    a2: np.ndarray                  # (H,) worsening scores
    cov2: np.ndarray | None         # (H, 2, 2)
    ellipses: list | None
    g_index: np.ndarray             # (2, H) positions of the dummies in the flat parameter vector
    a_bar: np.ndarray | None = None
    se_uni: np.ndarray | None = None
    ci95: np.ndarray | None = None  # (H, 2)
    ranking: list | None = None     # facility numbers (1-based), best first
    avg_initial_probs: np.ndarray | None = None
    wald: dict = field(default_factory=dict)   # "a1" / "a2" / "a_bar" -> list[WaldRow]

    @property
    def n_facilities(self) -> int:
        return len(self.a1)

    @property
    def quadrants(self) -> list:
        return [quadrant(x, y) for x, y in zip(self.a1, self.a2)]

    def to_dict(self) -> dict:
        H = self.n_facilities
        rows = []
        for h in range(H):
            row = {"facility": h + 1, "a1": float(self.a1[h]), "a2": float(self.a2[h]),
                   "quadrant": self.quadrants[h]}
            if self.cov2 is not None:
                row["cov2"] = self.cov2[h].tolist()
                row["ellipse"] = self.ellipses[h].to_dict() if self.ellipses else None
            for key in ("a1", "a2", "a_bar"):
                if key in self.wald:
                    w = self.wald[key][h]
                    row[f"{key}_se"], row[f"{key}_z"], row[f"{key}_p"] = w.se, w.z, w.p
            if self.a_bar is not None:
                row["a_bar"] = float(self.a_bar[h])
                row["se_uni"] = float(self.se_uni[h]) if self.se_uni is not None else None
                row["ci95"] = self.ci95[h].tolist() if self.ci95 is not None else None
                row["rank"] = self.ranking.index(h + 1) + 1 if self.ranking else None
            rows.append(row)
        return {"facilities": rows, "ranking": self.ranking,
                "avg_initial_probs": None if self.avg_initial_probs is None
                else self.avg_initial_probs.tolist()}


def facility_dummy_index(layout: Layout) -> np.ndarray:
    """(2, H) flat indices of the facility dummies in the improve / worsen blocks."""
    config = layout.config
    if config.transition_mode != SHARED_UPDOWN:
        raise NumericalError("facility scores need the shared improve/worsen transition model", code="NOT_M2")
    if config.k < 2:
        raise NumericalError("facility scores need at least two latent states", code="NOT_M2")
    cols = [i for i, c in enumerate(layout.trans_columns) if c.startswith("facility_")]
    if not cols:
        raise NumericalError("facility dummies are not in the transition model", code="NOT_M2")
    start = layout.slices["gamma"].start
    p = len(layout.trans_columns)
    return np.array([[start + b * p + c for c in cols] for b in range(2)])


def contrast_matrix(H: int) -> np.ndarray:
    """Deviation from the unweighted mean, L = I - J/H."""
    return np.eye(H) - np.full((H, H), 1.0 / H)


def facility_contrasts(theta_hat: Parameters, cov, config: ModelConfig, n_items: int,
                       n_facilities: int) -> FacilityScoreReport:
    """Improvement and worsening scores with their 2x2 covariances and 95% ellipses.

    ``cov`` is the full parameter covariance; pass None for point estimates only.
    """
    layout = Layout(config, n_items, n_facilities)
    idx = facility_dummy_index(layout)
    H = idx.shape[1]
    vec = theta_hat.flatten()
    L = contrast_matrix(H)
    a1 = L @ vec[idx[0]]
    a2 = L @ vec[idx[1]]
    report = FacilityScoreReport(a1, a2, None, None, idx)
    if cov is None:
        return report
    cov = np.asarray(cov, dtype=np.float64)
    both = idx.ravel()
    sub = cov[np.ix_(both, both)]
    if not np.all(np.isfinite(sub)):
        raise NumericalError("covariance of the facility coefficients is undefined", code="DEGENERATE_COV")
    # rows 0..H-1 give a1, rows H..2H-1 give a2
    C = np.zeros((2 * H, 2 * H))
    C[:H, :H] = L
    C[H:, H:] = L
    full = C @ sub @ C.T
    full = 0.5 * (full + full.T)
    cov2 = np.empty((H, 2, 2))
    ellipses = []
    for h in range(H):
        s = full[np.ix_([h, H + h], [h, H + h])]
        det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
        if not det > 1e-14 * max(s[0, 0] * s[1, 1], 1e-300):
            raise NumericalError(f"score covariance of facility {h + 1} is not invertible",
                                 code="DEGENERATE_COV")
        cov2[h] = s
        ellipses.append(confidence_ellipse((a1[h], a2[h]), s))
    report.cov2 = cov2
    report.ellipses = ellipses
    se1 = np.sqrt(cov2[:, 0, 0])
    se2 = np.sqrt(cov2[:, 1, 1])
    report.wald["a1"] = wald_table(a1, se1)
    report.wald["a2"] = wald_table(a2, se2)
    return report


def rank_facilities(scores) -> list:
    """Facility numbers ordered by score descending, ties to the lower number."""
    scores = np.asarray(scores, dtype=float)
    return [int(h) + 1 for h in sorted(range(len(scores)), key=lambda h: (-scores[h], h))]


def unidimensional_scores(report: FacilityScoreReport) -> FacilityScoreReport:
    """Add a_bar = a1 - a2, its standard error, 95% interval, Wald rows and ranking."""
    report.a_bar = report.a1 - report.a2
    if report.cov2 is not None:
        var = report.cov2[:, 0, 0] + report.cov2[:, 1, 1] - 2.0 * report.cov2[:, 0, 1]
        report.se_uni = np.sqrt(np.clip(var, 0.0, None))
        report.ci95 = np.column_stack([report.a_bar - Z_95 * report.se_uni,
                                       report.a_bar + Z_95 * report.se_uni])
        report.wald["a_bar"] = wald_table(report.a_bar, report.se_uni)
    report.ranking = rank_facilities(report.a_bar)
    return report


def average_initial_probs(theta_hat: Parameters, panel: PanelData, config: ModelConfig) -> np.ndarray:
    """Unweighted mean over subjects of the fitted initial-state distribution."""
    if config.k == 1:
        return np.ones(1)
    design = build_design(panel, config)
    pi = initial_probs_batch(theta_hat.beta, design.x_init, config.k)
    return pi.mean(axis=0)


def classify(posteriors) -> np.ndarray:
    """Most probable state (1-based) per row; ties go to the lowest state."""
    post = np.asarray(posteriors, dtype=np.float64)
    return np.argmax(post, axis=-1) + 1


def score_facilities(theta_hat: Parameters, cov, panel: PanelData,
                     config: ModelConfig) -> FacilityScoreReport:
    """Full model-based score report for a fitted shared-parameter model."""
    report = facility_contrasts(theta_hat, cov, config, panel.n_items, panel.n_facilities)
    report = unidimensional_scores(report)
    report.avg_initial_probs = average_initial_probs(theta_hat, panel, config)
    return report


__all__ = ["CHI2_2_95", "Z_95", "DescriptiveScores", "Ellipse", "FacilityScoreReport", "WaldRow",
           "average_initial_probs", "classify", "confidence_ellipse", "contrast_matrix",
           "descriptive_scores", "facility_contrasts", "facility_dummy_index", "quadrant",
           "rank_facilities", "score_facilities", "unidimensional_scores"]
