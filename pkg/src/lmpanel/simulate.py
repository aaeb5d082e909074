"""Synthetic cohorts drawn from the latent Markov model.

Subject ``i`` of a design with seed ``s`` uses its own stream
``numpy.random.default_rng([s, 0, i])`` (PCG64 seeded through SeedSequence),
so a subject's draws do not depend on how many subjects precede it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .links import initial_probs, transition_matrices
from .model import (Layout, ModelConfig, Occasion, PanelData, Parameters, SubjectRecord,
                    _columns, validate_panel)

RNG_NAME = "numpy PCG64 via SeedSequence([seed, 0, subject_index])"


@dataclass(frozen=True, eq=False)
class SimDesign:
    n_subjects: int
    n_facilities: int
    n_items: int
    config: ModelConfig
    params: Parameters
    n_occasions: int | tuple[int, int] = 8
    age_range: tuple[float, float] = (65.0, 95.0)
    gap_days: float | tuple[int, int] = 90.0
    facility_probs: tuple[float, ...] | None = None
    female_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        Layout(self.config, self.n_items, self.n_facilities).check(self.params)
        lam = self.params.lam
        if np.any(np.diff(lam, axis=1) < 0) or np.any(lam < 0) or np.any(lam > 1):
            raise ValueError("true item probabilities must lie in [0, 1] and increase across states")
        if self.facility_probs is not None:
            p = np.asarray(self.facility_probs, dtype=float)
            if len(p) != self.n_facilities or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ValueError("facility_probs must be a distribution over the facilities")

    @property
    def k(self) -> int:
        return self.config.k

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "n_facilities": self.n_facilities,
            "n_items": self.n_items,
            "config": self.config.to_dict(),
            "params": {"beta": self.params.beta.tolist(), "gamma": self.params.gamma.tolist(),
                       "lambda": self.params.lam.tolist()},
            "n_occasions": list(self.n_occasions) if isinstance(self.n_occasions, tuple) else self.n_occasions,
            "age_range": list(self.age_range),
            "gap_days": list(self.gap_days) if isinstance(self.gap_days, tuple) else self.gap_days,
            "facility_probs": None if self.facility_probs is None else list(self.facility_probs),
            "female_prob": self.female_prob,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimDesign":
        config = ModelConfig.from_dict(d["config"])
        layout = Layout(config, int(d["n_items"]), int(d["n_facilities"]))
        p = d["params"]
        gamma = np.asarray(p.get("gamma", []), dtype=float).reshape(layout.gamma_shape)
        params = Parameters(np.asarray(p.get("beta", []), dtype=float), gamma,
                            np.asarray(p["lambda"], dtype=float))

        def maybe_pair(v):
            return tuple(v) if isinstance(v, (list, tuple)) else v

        return cls(
            n_subjects=int(d["n_subjects"]),
            n_facilities=int(d["n_facilities"]),
            n_items=int(d["n_items"]),
            config=config,
            params=params,
            n_occasions=maybe_pair(d.get("n_occasions", 8)),
            age_range=tuple(d.get("age_range", (65.0, 95.0))),
            gap_days=maybe_pair(d.get("gap_days", 90.0)),
            facility_probs=None if d.get("facility_probs") is None else tuple(d["facility_probs"]),
            female_prob=float(d.get("female_prob", 0.5)),
            seed=int(d.get("seed", 0)),
        )


def _draw(rng, spec, integer=False):
    if isinstance(spec, tuple):
        lo, hi = spec
        return int(rng.integers(lo, hi + 1)) if integer else float(rng.integers(lo, hi + 1))
    return int(spec) if integer else float(spec)


def simulate_panel(design: SimDesign) -> tuple[PanelData, list[np.ndarray]]:
    """Draw a panel; also returns each subject's (zero-based) latent state path."""
    layout = Layout(design.config, design.n_items, design.n_facilities)
    theta = design.params
    k = design.k
    H = design.n_facilities
    fprobs = np.full(H, 1.0 / H) if design.facility_probs is None else np.asarray(design.facility_probs)
    subjects, paths = [], []
    for i in range(design.n_subjects):
        rng = np.random.default_rng([design.seed, 0, i])
        gender = int(rng.random() < design.female_prob)
        fac = int(rng.choice(H, p=fprobs))
        T = _draw(rng, design.n_occasions, integer=True)
        age = np.empty(T)
        gap = np.zeros(T)
        age[0] = rng.uniform(*design.age_range)
        for t in range(1, T):
            gap[t] = _draw(rng, design.gap_days)
            age[t] = age[t - 1] + gap[t] / 365.25
        g = np.full(T, float(gender))
        f = np.full(T, fac)
        states = np.empty(T, dtype=np.int64)
        if k == 1:
            states[:] = 0
        else:
            x_init = _columns(layout.init_columns, g[:1], age[:1], gap[:1], f[:1], H)[0]
            states[0] = rng.choice(k, p=initial_probs(theta.beta, x_init, k))
            if T > 1:
                x_trans = _columns(layout.trans_columns, g[1:], age[1:], gap[1:], f[1:], H)
                trans = transition_matrices(theta.gamma, x_trans, layout)
                for t in range(1, T):
                    states[t] = rng.choice(k, p=trans[t - 1, states[t - 1]])
        y = (rng.random((T, design.n_items)) < theta.lam[:, states].T).astype(int)
        onehot = tuple(int(h == fac) for h in range(H))
        occasions = tuple(Occasion(float(age[t]), float(gap[t]), tuple(int(v) for v in y[t]))
                          for t in range(T))
        subjects.append(SubjectRecord(f"S{i + 1:05d}", gender, onehot, occasions))
        paths.append(states)
    panel = validate_panel(subjects, n_items=design.n_items, n_facilities=H)
    return panel, paths
