import numpy as np
import pytest

from lmpanel.errors import DataError
from lmpanel.model import (SHARED_UPDOWN, UNRESTRICTED_TRIDIAG, Layout, ModelConfig, Occasion,
                           Parameters, SubjectRecord, admissible, build_design, count_parameters,
                           validate_panel)

from helpers import random_config, random_panel, random_theta


def subject(sid="a", gender=0, facility=(1, 0), occasions=None):
    occasions = occasions or [(80.0, 0.0, (0, 1)), (80.2, 73.0, (1, 1))]
    return {"subject_id": sid, "gender": gender, "facility": facility, "occasions": occasions}


# Published parameter counts: M1 for k = 1..8, then M2..M10 at k = 7 with J = 9, H = 11.
M1_COUNTS = [9, 59, 97, 135, 173, 211, 249, 287]
M2_M10 = {
    "M2": ([], 109), "M3": (["init:gender"], 108), "M4": (["init:age"], 108),
    "M5": (["init:facility"], 99), "M6": (["trans:gender"], 107), "M7": (["trans:age"], 107),
    "M8": (["trans:time_gap"], 107), "M9": (["trans:facility"], 89),
    "M10": (["init:gender", "trans:gender", "trans:age"], 104),
}


@pytest.mark.parametrize("k,v", list(zip(range(1, 9), M1_COUNTS)))
def test_count_parameters_m1(k, v):
    assert count_parameters(ModelConfig(k, UNRESTRICTED_TRIDIAG), 9, 11) == v


@pytest.mark.parametrize("label", list(M2_M10))
def test_count_parameters_m2_family(label):
    drops, v = M2_M10[label]
    assert count_parameters(ModelConfig(7, SHARED_UPDOWN).drop(drops), 9, 11) == v


def test_count_parameters_k1_is_items_only():
    for mode in (SHARED_UPDOWN, UNRESTRICTED_TRIDIAG):
        assert count_parameters(ModelConfig(1, mode), 9, 11) == 9


def test_restriction_never_adds_parameters():
    for k in range(2, 8):
        assert count_parameters(ModelConfig(k, SHARED_UPDOWN), 9, 11) <= \
            count_parameters(ModelConfig(k, UNRESTRICTED_TRIDIAG), 9, 11)


def test_admissible_moves_are_tridiagonal():
    assert admissible(0, 3) == (1,)
    assert admissible(1, 3) == (0, 2)
    assert admissible(2, 3) == (1,)
    assert admissible(0, 1) == ()


def test_drop_grammar_and_aliases():
    cfg = ModelConfig(3).drop(["init:gender", "trans:time", "trans:nursing_home"])
    assert cfg.dropped == ("init:gender", "trans:time_gap", "trans:facility")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ModelConfig(3).drop(["init:time_gap"])
    with pytest.raises(ValueError):
        ModelConfig(3).drop(["bogus"])


def test_intercept_added_when_facility_dropped():
    lay = Layout(ModelConfig(3).drop(["init:facility"]), 2, 4)
    assert lay.init_columns == ["gender", "age", "intercept"]
    assert "intercept" not in Layout(ModelConfig(3), 2, 4).init_columns


def test_names_match_size_and_flatten_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(20):
        cfg = random_config(rng)
        lay = Layout(cfg, 3, 2)
        theta = random_theta(rng, lay)
        assert len(lay.names()) == lay.size == len(theta.flatten())
        assert lay.unflatten(theta.flatten()) == theta


def test_parameters_are_read_only():
    theta = Parameters([0.1], np.zeros((2, 1)), [[0.2, 0.4]])
    with pytest.raises(ValueError):
        theta.lam[0, 0] = 0.5


def test_validate_accepts_triples_and_mappings():
    panel = validate_panel([subject()])
    assert panel.n_subjects == 1 and panel.n_items == 2 and panel.n_facilities == 2
    assert panel.subjects[0].occasions[1] == Occasion(80.2, 73.0, (1, 1))
    assert panel.n_occasions == 2


def test_first_gap_is_reset_to_zero():
    panel = validate_panel([subject(occasions=[(80.0, 12.0, (0, 1))])])
    assert panel.subjects[0].occasions[0].days_since_prev == 0.0


@pytest.mark.parametrize("mutate,code", [
    (lambda s: s.update(occasions=[(80.0, 0.0, (0, 2))]), "NON_BINARY_RESPONSE"),
    (lambda s: s.update(occasions=[(80.0, 0.0, (0, None))]), "MISSING_VALUE"),
    (lambda s: s.update(occasions=[(None, 0.0, (0, 1))]), "MISSING_VALUE"),
    (lambda s: s.update(facility=(1, 1)), "BAD_FACILITY"),
    (lambda s: s.update(facility=(0, 0)), "BAD_FACILITY"),
    (lambda s: s.update(gender=2), "BAD_COVARIATE"),
    (lambda s: s.update(occasions=[(80.0, 0.0, (0, 1)), (79.0, 30.0, (0, 1))]), "BAD_COVARIATE"),
    (lambda s: s.update(occasions=[(80.0, 0.0, (0, 1)), (80.1, -3.0, (0, 1))]), "BAD_COVARIATE"),
])
def test_validation_errors(mutate, code):
    s = subject()
    mutate(s)
    with pytest.raises(DataError) as err:
        validate_panel([s])
    assert err.value.code == code


def test_empty_and_duplicate_panels():
    with pytest.raises(DataError) as err:
        validate_panel([])
    assert err.value.code == "EMPTY_PANEL"
    with pytest.raises(DataError) as err:
        validate_panel([subject("a"), subject("a")])
    assert err.value.code == "SCHEMA_ERROR"


def test_validate_is_idempotent():
    rng = np.random.default_rng(1)
    panel = random_panel(rng)
    assert validate_panel(panel) == panel


def test_design_zeroes_first_transition_rows():
    rng = np.random.default_rng(2)
    panel = random_panel(rng, n=6, T=(1, 4))
    design = build_design(panel, ModelConfig(3))
    first = panel.arrays.first
    assert np.all(design.x_trans[first] == 0)
    assert design.x_init.shape == (panel.n_subjects, len(design.layout.init_columns))


def test_subject_record_facility_index():
    s = SubjectRecord("x", 1, (0, 0, 1), (Occasion(70.0, 0.0, (1,)),))
    assert s.facility_index == 2 and s.n_occasions == 1
