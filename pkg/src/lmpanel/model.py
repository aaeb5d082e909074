"""Domain types, parameter layout and covariate design.

Panels are immutable.  Numeric views used by the estimation code are built
lazily and cached on the panel (:attr:`PanelData.arrays`) and on each
(panel, config) pair (:func:`build_design`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

DEFAULT_ITEM_LABELS = ("CC1", "CC2", "CC3", "ADL1", "ADL2", "ADL3", "ADL4", "SC1", "SC2")

INIT_COVARIATES = ("gender", "age", "facility")
TRANS_COVARIATES = ("gender", "age", "time_gap", "facility")

UNRESTRICTED_TRIDIAG = "m1"
SHARED_UPDOWN = "m2"


@dataclass(frozen=True)
class Occasion:
    age: float
    days_since_prev: float
    responses: tuple[int, ...]


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    gender: int
    facility: tuple[int, ...]
    occasions: tuple[Occasion, ...]

    @property
    def n_occasions(self) -> int:
        return len(self.occasions)

    @property
    def facility_index(self) -> int:
        """Zero-based index of the hosting facility."""
        return self.facility.index(1)


@dataclass(frozen=True, eq=True)
class PanelData:
    subjects: tuple[SubjectRecord, ...]
    n_items: int
    n_facilities: int
    item_labels: tuple[str, ...]

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_occasions(self) -> int:
        """Total number of subject-occasions."""
        return sum(s.n_occasions for s in self.subjects)

    @cached_property
    def arrays(self) -> "PanelArrays":
        return PanelArrays.from_panel(self)


@dataclass(frozen=True)
class PanelArrays:
    """Flat occasion-major arrays; subject ``i`` owns rows ``offsets[i]:offsets[i+1]``."""

    offsets: np.ndarray
    y: np.ndarray
    subject_of: np.ndarray
    first: np.ndarray
    age: np.ndarray
    gap: np.ndarray
    gender: np.ndarray
    facility: np.ndarray

    @classmethod
    def from_panel(cls, panel: PanelData) -> "PanelArrays":
        lengths = np.array([s.n_occasions for s in panel.subjects], dtype=np.int64)
        offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        occ = [o for s in panel.subjects for o in s.occasions]
        y = np.array([o.responses for o in occ], dtype=np.float64).reshape(len(occ), panel.n_items)
        first = np.zeros(len(occ), dtype=bool)
        first[offsets[:-1]] = True
        arrays = cls(
            offsets=offsets,
            y=y,
            subject_of=np.repeat(np.arange(len(lengths)), lengths),
            first=first,
            age=np.array([o.age for o in occ], dtype=np.float64),
            gap=np.array([o.days_since_prev for o in occ], dtype=np.float64),
            gender=np.array([s.gender for s in panel.subjects], dtype=np.float64),
            facility=np.array([s.facility_index for s in panel.subjects], dtype=np.int64),
        )
        for a in (arrays.offsets, arrays.y, arrays.subject_of, arrays.first, arrays.age,
                  arrays.gap, arrays.gender, arrays.facility):
            a.setflags(write=False)
        return arrays


def _is_missing(value) -> bool:
    if value is None:
        return True
    if isinstance(value, str) and value.strip() == "":
        return True
    try:
        return math.isnan(float(value))
    except (TypeError, ValueError):
        return False


def _as_binary(value, what: str, code: str) -> int:
    try:
        f = float(value)
    except (TypeError, ValueError):
        raise DataError(f"{what}: value {value!r} is not 0 or 1", code) from None
    if f == 0.0:
        return 0
    if f == 1.0:
        return 1
    raise DataError(f"{what}: value {value!r} is not 0 or 1", code)


def _get(raw, name):
    if isinstance(raw, Mapping):
        return raw.get(name)
    return getattr(raw, name, None)


def _validate_subject(raw, n_items: int | None, n_facilities: int | None) -> SubjectRecord:
    sid = _get(raw, "subject_id")
    if _is_missing(sid):
        raise DataError("subject without subject_id", "MISSING_VALUE")
    sid = str(sid)
    gender = _get(raw, "gender")
    if _is_missing(gender):
        raise DataError(f"subject {sid}: missing gender", "MISSING_VALUE")
    gender = _as_binary(gender, f"subject {sid} gender", "BAD_COVARIATE")

    facility = _get(raw, "facility")
    if facility is None or any(_is_missing(v) for v in facility):
        raise DataError(f"subject {sid}: missing facility", "MISSING_VALUE")
    try:
        facility = tuple(_as_binary(v, "facility", "BAD_FACILITY") for v in facility)
    except DataError:
        raise DataError(f"subject {sid}: facility vector is not one-hot", "BAD_FACILITY") from None
    if sum(facility) != 1 or (n_facilities is not None and len(facility) != n_facilities):
        raise DataError(f"subject {sid}: facility vector is not one-hot over "
                        f"{n_facilities if n_facilities is not None else len(facility)} facilities",
                        "BAD_FACILITY")

    raw_occ = _get(raw, "occasions")
    if not raw_occ:
        raise DataError(f"subject {sid}: no occasions", "MISSING_VALUE")
    occasions = []
    prev_age = -math.inf
    for t, o in enumerate(raw_occ, start=1):
        if isinstance(o, Occasion):
            age, gap, resp = o.age, o.days_since_prev, o.responses
        elif isinstance(o, Mapping):
            age, gap, resp = o.get("age"), o.get("days_since_prev"), o.get("responses")
        else:
            age, gap, resp = o
        if _is_missing(age) or (t > 1 and _is_missing(gap)) or resp is None:
            raise DataError(f"subject {sid} occasion {t}: missing covariate", "MISSING_VALUE")
        age = float(age)
        if age < prev_age:
            raise DataError(f"subject {sid} occasion {t}: age decreases", "BAD_COVARIATE")
        prev_age = age
        gap = 0.0 if t == 1 else float(gap)
        if gap < 0:
            raise DataError(f"subject {sid} occasion {t}: negative days_since_prev", "BAD_COVARIATE")
        resp = tuple(resp)
        if n_items is not None and len(resp) != n_items:
            raise DataError(f"subject {sid} occasion {t}: expected {n_items} responses, "
                            f"got {len(resp)}", "MISSING_VALUE")
        if any(_is_missing(v) for v in resp):
            raise DataError(f"subject {sid} occasion {t}: missing response", "MISSING_VALUE")
        resp = tuple(_as_binary(v, f"subject {sid} occasion {t} response", "NON_BINARY_RESPONSE")
                     for v in resp)
        occasions.append(Occasion(age, gap, resp))
    return SubjectRecord(sid, gender, facility, tuple(occasions))


def validate_panel(raw_subjects: Iterable | PanelData, n_items: int | None = None,
                   n_facilities: int | None = None,
                   item_labels: Sequence[str] | None = None) -> PanelData:
    """Check raw subject records and freeze them into a :class:`PanelData`.

    ``raw_subjects`` may hold :class:`SubjectRecord` objects or mappings with
    the same field names; occasions may be :class:`Occasion` objects, mappings
    or ``(age, days_since_prev, responses)`` triples.
    """
    if isinstance(raw_subjects, PanelData):
        n_items = raw_subjects.n_items if n_items is None else n_items
        n_facilities = raw_subjects.n_facilities if n_facilities is None else n_facilities
        item_labels = raw_subjects.item_labels if item_labels is None else item_labels
        raw_subjects = raw_subjects.subjects
    raw_subjects = list(raw_subjects)
    if not raw_subjects:
        raise DataError("panel has no subjects", "EMPTY_PANEL")

    subjects = []
    for raw in raw_subjects:
        rec = _validate_subject(raw, n_items, n_facilities)
        if n_items is None:
            n_items = len(rec.occasions[0].responses)
            rec = _validate_subject(rec, n_items, n_facilities)
        if n_facilities is None:
            n_facilities = len(rec.facility)
        subjects.append(rec)
    if n_items < 1:
        raise DataError("panel has no items", "EMPTY_PANEL")
    seen = set()
    for s in subjects:
        if s.subject_id in seen:
            raise DataError(f"duplicate subject_id {s.subject_id}", "SCHEMA_ERROR")
        seen.add(s.subject_id)

    if item_labels is None:
        if n_items == len(DEFAULT_ITEM_LABELS):
            item_labels = DEFAULT_ITEM_LABELS
        else:
            item_labels = tuple(f"item_{j + 1}" for j in range(n_items))
    item_labels = tuple(str(x) for x in item_labels)
    if len(item_labels) != n_items:
        raise DataError("item_labels length does not match the number of items", "SCHEMA_ERROR")
    return PanelData(tuple(subjects), n_items, n_facilities, item_labels)


# ---------------------------------------------------------------------------
# Model configuration and parameter layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    k: int
    transition_mode: str = SHARED_UPDOWN
    init_covariates: frozenset = field(default_factory=lambda: frozenset(INIT_COVARIATES))
    trans_covariates: frozenset = field(default_factory=lambda: frozenset(TRANS_COVARIATES))

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.transition_mode not in (UNRESTRICTED_TRIDIAG, SHARED_UPDOWN):
            raise ValueError(f"unknown transition_mode {self.transition_mode!r}")
        object.__setattr__(self, "init_covariates", frozenset(self.init_covariates))
        object.__setattr__(self, "trans_covariates", frozenset(self.trans_covariates))
        if not self.init_covariates <= set(INIT_COVARIATES):
            raise ValueError(f"unknown initial covariates {set(self.init_covariates) - set(INIT_COVARIATES)}")
        if not self.trans_covariates <= set(TRANS_COVARIATES):
            raise ValueError(f"unknown transition covariates {set(self.trans_covariates) - set(TRANS_COVARIATES)}")

    def drop(self, specs: Iterable[str]) -> "ModelConfig":
        """Remove covariates named as ``"init:age"`` / ``"trans:time_gap"``."""
        init, trans = set(self.init_covariates), set(self.trans_covariates)
        for spec in specs:
            part, _, name = spec.strip().partition(":")
            name = {"time": "time_gap", "nursing_home": "facility"}.get(name, name)
            if part == "init" and name in INIT_COVARIATES:
                init.discard(name)
            elif part == "trans" and name in TRANS_COVARIATES:
                trans.discard(name)
            else:
                raise ValueError(f"bad drop specification {spec!r}")
        return ModelConfig(self.k, self.transition_mode, frozenset(init), frozenset(trans))

    @property
    def dropped(self) -> tuple[str, ...]:
        out = [f"init:{c}" for c in INIT_COVARIATES if c not in self.init_covariates]
        out += [f"trans:{c}" for c in TRANS_COVARIATES if c not in self.trans_covariates]
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "transition_mode": self.transition_mode,
            "init_covariates": [c for c in INIT_COVARIATES if c in self.init_covariates],
            "trans_covariates": [c for c in TRANS_COVARIATES if c in self.trans_covariates],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(int(d["k"]), d.get("transition_mode", SHARED_UPDOWN),
                   frozenset(d.get("init_covariates", INIT_COVARIATES)),
                   frozenset(d.get("trans_covariates", TRANS_COVARIATES)))


def admissible(c: int, k: int) -> tuple[int, ...]:
    """Zero-based destinations other than ``c`` reachable from state ``c``."""
    return tuple(d for d in (c - 1, c + 1) if 0 <= d < k)


def covariate_columns(names: Iterable[str], order: Sequence[str], n_facilities: int) -> list[str]:
    cols = []
    for name in order:
        if name not in names:
            continue
        if name == "facility":
            cols += [f"facility_{h + 1}" for h in range(n_facilities)]
        else:
            cols.append(name)
    # Facility dummies double as the intercept; without them a constant column is added.
    if "facility" not in names:
        cols.append("intercept")
    return cols


@dataclass(frozen=True)
class Layout:
    """Shapes and names of the parameter blocks for one (config, J, H)."""

    config: ModelConfig
    n_items: int
    n_facilities: int

    @cached_property
    def init_columns(self) -> list[str]:
        return covariate_columns(self.config.init_covariates, INIT_COVARIATES, self.n_facilities)

    @cached_property
    def trans_columns(self) -> list[str]:
        return covariate_columns(self.config.trans_covariates, TRANS_COVARIATES, self.n_facilities)

    @property
    def n_cuts(self) -> int:
        return max(self.config.k - 2, 0)

    @property
    def n_beta(self) -> int:
        return self.n_cuts + len(self.init_columns) if self.config.k >= 2 else 0

    @cached_property
    def pairs(self) -> list[tuple[int, int]]:
        """Off-diagonal admissible (c, d) pairs, zero-based, row-major."""
        k = self.config.k
        return [(c, d) for c in range(k) for d in admissible(c, k)]

    @cached_property
    def block_of(self) -> dict[tuple[int, int], int]:
        """gamma block used by each admissible pair."""
        if self.config.transition_mode == SHARED_UPDOWN:
            return {(c, d): (0 if d < c else 1) for c, d in self.pairs}
        return {p: b for b, p in enumerate(self.pairs)}

    @property
    def n_blocks(self) -> int:
        if self.config.k < 2:
            return 0
        return 2 if self.config.transition_mode == SHARED_UPDOWN else 2 * (self.config.k - 1)

    @property
    def gamma_shape(self) -> tuple[int, int]:
        return (self.n_blocks, len(self.trans_columns))

    @property
    def size(self) -> int:
        nb, pt = self.gamma_shape
        return self.n_beta + nb * pt + self.n_items * self.config.k

    @cached_property
    def slices(self) -> dict[str, slice]:
        nb, pt = self.gamma_shape
        b = self.n_beta
        g = b + nb * pt
        return {"beta": slice(0, b), "gamma": slice(b, g), "lambda": slice(g, self.size)}

    def block_label(self, b: int) -> str:
        if self.config.transition_mode == SHARED_UPDOWN:
            return ("improve", "worsen")[b]
        c, d = self.pairs[b]
        return f"{c + 1}->{d + 1}"

    def names(self, item_labels: Sequence[str] | None = None) -> list[str]:
        if item_labels is None:
            item_labels = [f"item_{j + 1}" for j in range(self.n_items)]
        out = []
        if self.config.k >= 2:
            out += [f"init.cut_{c + 2}" for c in range(self.n_cuts)]
            out += [f"init.{col}" for col in self.init_columns]
        for b in range(self.n_blocks):
            out += [f"trans.{self.block_label(b)}.{col}" for col in self.trans_columns]
        for j in range(self.n_items):
            out += [f"lambda.{item_labels[j]}.state_{c + 1}" for c in range(self.config.k)]
        return out

    def unflatten(self, vec) -> "Parameters":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}, got shape {vec.shape}")
        s = self.slices
        return Parameters(vec[s["beta"]].copy(),
                          vec[s["gamma"]].reshape(self.gamma_shape).copy(),
                          vec[s["lambda"]].reshape(self.n_items, self.config.k).copy())

    def check(self, theta: "Parameters") -> None:
        if theta.beta.shape != (self.n_beta,) or theta.gamma.shape != self.gamma_shape \
                or theta.lam.shape != (self.n_items, self.config.k):
            raise ValueError("parameter shapes do not match the model layout")


def layout_for(config: ModelConfig, panel: PanelData) -> Layout:
    return Layout(config, panel.n_items, panel.n_facilities)


@dataclass(frozen=True, eq=False)
class Parameters:
    """beta (cut shifts then slopes), gamma (blocks x columns), lam (items x states)."""

    beta: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        for name in ("beta", "gamma", "lam"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.gamma.ndim != 2 or self.lam.ndim != 2 or self.beta.ndim != 1:
            raise ValueError("beta must be 1-D, gamma and lam 2-D")

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.beta, self.gamma.ravel(), self.lam.ravel()])

    def replace(self, **kw) -> "Parameters":
        d = {"beta": self.beta, "gamma": self.gamma, "lam": self.lam}
        d.update(kw)
        return Parameters(**d)

    def __eq__(self, other):
        if not isinstance(other, Parameters):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in
                   ((self.beta, other.beta), (self.gamma, other.gamma), (self.lam, other.lam)))

    __hash__ = None


def count_parameters(config: ModelConfig, n_items: int, n_facilities: int) -> int:
    """Number of free parameters of a model, as used in the BIC penalty."""
    return Layout(config, n_items, n_facilities).size


# ---------------------------------------------------------------------------
# Covariate design
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Design:
    layout: Layout
    x_init: np.ndarray   # (n, p_init) from each subject's first occasion
    x_trans: np.ndarray  # (N, p_trans); rows of first occasions are zero and unused


def _columns(names: Sequence[str], gender, age, gap, facility, n_facilities) -> np.ndarray:
    cols = []
    for name in names:
        if name == "gender":
            cols.append(gender)
        elif name == "age":
            cols.append(age)
        elif name == "time_gap":
            cols.append(gap)
        elif name == "intercept":
            cols.append(np.ones_like(age))
        else:
            h = int(name.rsplit("_", 1)[1]) - 1
            cols.append((facility == h).astype(np.float64))
    if not cols:
        return np.zeros((len(age), 0))
    return np.column_stack(cols)


def build_design(panel: PanelData, config: ModelConfig) -> Design:
    layout = layout_for(config, panel)
    a = panel.arrays
    start = a.offsets[:-1]
    x_init = _columns(layout.init_columns, a.gender, a.age[start], a.gap[start], a.facility,
                      panel.n_facilities)
    x_trans = _columns(layout.trans_columns, a.gender[a.subject_of], a.age, a.gap,
                       a.facility[a.subject_of], panel.n_facilities)
    x_trans[a.first] = 0.0
    x_init.setflags(write=False)
    x_trans.setflags(write=False)
    return Design(layout, x_init, x_trans)
