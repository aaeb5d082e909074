"""Panel CSV files and JSON result reports.

Panel files are long: one row per subject-occasion with the columns
``subject_id, occasion, facility_id, gender, age, days_since_prev,
item_1, ..., item_J``.  Facility ids are 1-based; occasions run 1..T_i
without gaps.  The first occasion's ``days_since_prev`` may be empty.
"""

from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from contextlib import nullcontext
from datetime import datetime, timezone
from typing import Any, Mapping

import numpy as np

from .errors import DataError
from .model import Layout, ModelConfig, PanelData, Parameters, validate_panel

FORMAT_VERSION = "1"
BASE_COLUMNS = ("subject_id", "occasion", "facility_id", "gender", "age", "days_since_prev")
SIG_DIGITS = 6


# ---------------------------------------------------------------------------
# Panel CSV
# ---------------------------------------------------------------------------


def _open(source, mode):
    if hasattr(source, "read") or hasattr(source, "write"):
        return nullcontext(source)
    try:
        return open(source, mode, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {source}: {exc}", "IO_ERROR") from None


def _number(text: str, line: int, column: str, integer: bool = False):
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}: column {column}: cannot parse {text!r} as a number",
                        "PARSE_ERROR") from None
    if integer:
        if not value.is_integer():
            raise DataError(f"line {line}: column {column}: {text!r} is not an integer", "PARSE_ERROR")
        return int(value)
    return value


def _check_header(header: list[str]) -> int:
    header = [h.strip() for h in header]
    if tuple(header[:len(BASE_COLUMNS)]) != BASE_COLUMNS:
        raise DataError(f"header must start with {', '.join(BASE_COLUMNS)}; got {', '.join(header)}",
                        "SCHEMA_ERROR")
    items = header[len(BASE_COLUMNS):]
    if not items:
        raise DataError("header has no item columns", "SCHEMA_ERROR")
    expected = [f"item_{j + 1}" for j in range(len(items))]
    if items != expected:
        raise DataError(f"item columns must be {', '.join(expected)}", "SCHEMA_ERROR")
    return len(items)


def parse_panel_csv(source, n_facilities: int | None = None, item_labels=None) -> PanelData:
    """Read a long-format panel file (path or text stream).

    The number of facilities is the largest facility id unless given.
    """
    with _open(source, "r") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("file is empty (no header row)", "SCHEMA_ERROR") from None
        except csv.Error as exc:
            raise DataError(f"line 1: {exc}", "PARSE_ERROR") from None
        n_items = _check_header(header)
        width = len(BASE_COLUMNS) + n_items
        groups: "OrderedDict[str, list]" = OrderedDict()
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(c.strip() == "" for c in row):
                    continue
                if len(row) != width:
                    raise DataError(f"line {line}: expected {width} fields, found {len(row)}", "PARSE_ERROR")
                sid = row[0].strip()
                if sid == "":
                    raise DataError(f"line {line}: empty subject_id", "MISSING_VALUE")
                occ = _number(row[1], line, "occasion", integer=True)
                fac = _number(row[2], line, "facility_id", integer=True)
                if occ is None or fac is None:
                    raise DataError(f"line {line}: occasion and facility_id are required", "MISSING_VALUE")
                gender = _number(row[3], line, "gender")
                age = _number(row[4], line, "age")
                gap = _number(row[5], line, "days_since_prev")
                items = [_number(v, line, f"item_{j + 1}") for j, v in enumerate(row[6:])]
                groups.setdefault(sid, []).append((occ, fac, gender, age, gap, items, line))
        except csv.Error as exc:
            raise DataError(f"line {reader.line_num}: {exc}", "PARSE_ERROR") from None
    if not groups:
        raise DataError("panel has no data rows", "EMPTY_PANEL")

    max_fac = max(r[1] for rows in groups.values() for r in rows)
    H = max_fac if n_facilities is None else n_facilities
    subjects = []
    for sid, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        occs = [r[0] for r in rows]
        if occs != list(range(1, len(rows) + 1)):
            raise DataError(f"subject {sid}: occasions {occs} are not 1..{len(rows)}", "SCHEMA_ERROR")
        facs = {r[1] for r in rows}
        genders = {r[2] for r in rows}
        if len(facs) != 1:
            raise DataError(f"subject {sid}: facility_id changes across occasions", "SCHEMA_ERROR")
        if len(genders) != 1:
            raise DataError(f"subject {sid}: gender changes across occasions", "SCHEMA_ERROR")
        fac = rows[0][1]
        if not 1 <= fac <= H:
            raise DataError(f"line {rows[0][6]}: facility_id {fac} outside 1..{H}", "BAD_FACILITY")
        occasions = []
        for t, (_, _, _, age, gap, items, line) in enumerate(rows):
            if t == 0 and gap is None:
                gap = 0.0
            occasions.append({"age": age, "days_since_prev": gap, "responses": items})
        subjects.append({"subject_id": sid, "gender": rows[0][2],
                         "facility": [int(h + 1 == fac) for h in range(H)], "occasions": occasions})
    return validate_panel(subjects, n_items=n_items, n_facilities=H, item_labels=item_labels)


def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def write_panel_csv(panel: PanelData, target) -> None:
    """Write ``panel`` in the long format read by :func:`parse_panel_csv`."""
    with _open(target, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(BASE_COLUMNS) + [f"item_{j + 1}" for j in range(panel.n_items)])
        for s in panel.subjects:
            for t, o in enumerate(s.occasions):
                w.writerow([s.subject_id, t + 1, s.facility_index + 1, s.gender, repr(float(o.age)),
                            _fmt(o.days_since_prev)] + [int(v) for v in o.responses])


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def round_sig(x, digits: int = SIG_DIGITS):
    """Round every float in a nested structure to ``digits`` significant digits; nan/inf -> None."""
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return None
        return float(f"{x:.{digits}g}")
    if isinstance(x, np.ndarray):
        return round_sig(x.tolist(), digits)
    if isinstance(x, Mapping):
        return {str(k): round_sig(v, digits) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [round_sig(v, digits) for v in x]
    return x


def _exact(x):
    """Full-precision JSON-safe copy (nan/inf -> None)."""
    if isinstance(x, np.ndarray):
        return _exact(x.tolist())
    if isinstance(x, (list, tuple)):
        return [_exact(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


def build_report(fit=None, inference=None, scores=None, *, panel: PanelData | None = None,
                 descriptive=None, indices: Mapping | None = None, classifications=None,
                 invocation: Mapping | None = None, rng: str | None = None,
                 scores_error: str | None = None, selection=None) -> dict:
    """Assemble the report dictionary; missing components become null sections.

    ``indices`` holds fit summaries (bic, r2, s_index, loglik0).  Estimates
    are stored twice: rounded in the human-facing tables and at full
    precision under ``theta`` so later subcommands rebuild the exact fit.
    """
    rep: dict[str, Any] = {"format_version": FORMAT_VERSION,
                           "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                           "invocation": dict(invocation or {}), "rng": rng}
    if panel is not None:
        rep["panel"] = {"n_subjects": panel.n_subjects, "n_items": panel.n_items,
                        "n_facilities": panel.n_facilities, "n_occasions": panel.n_occasions,
                        "item_labels": list(panel.item_labels)}
    if fit is not None:
        config: ModelConfig = fit.config
        theta: Parameters = fit.theta_hat
        rep["config"] = config.to_dict()
        summary = {"loglik": fit.loglik, "v": fit.v, "n_iter": fit.n_iter, "converged": fit.converged,
                   "diagnostics": dict(sorted(fit.diagnostics.items()))}
        summary.update(indices or {})
        rep["fit"] = round_sig(summary)
        names = fit.layout.names(panel.item_labels if panel is not None else None)
        est = theta.flatten()
        if inference is not None:
            se, z, p = inference.se, inference.wald_z, inference.p_values
        else:
            se = z = p = np.full(len(est), np.nan)
        rep["parameters"] = [round_sig({"name": n, "estimate": e, "se": s, "z": zz, "p": pp})
                             for n, e, s, zz, pp in zip(names, est, se, z, p)]
        if config.k > 1:
            rep["beta"] = round_sig(theta.beta)
            rep["gamma"] = round_sig(theta.gamma)
        rep["lambda"] = round_sig(theta.lam)
        theta_exact = {"lambda": _exact(theta.lam)}
        if config.k > 1:
            theta_exact = {"beta": _exact(theta.beta), "gamma": _exact(theta.gamma), **theta_exact}
        rep["theta"] = theta_exact
    rep["inference"] = None if inference is None else {
        "info_condition": round_sig(inference.info_condition),
        "asymmetry": round_sig(inference.asymmetry),
        "warnings": list(inference.warnings),
        "free": [bool(b) for b in inference.free],
        "covariance": _exact(inference.cov),
    }
    rep["scores"] = {
        "descriptive": None if descriptive is None else round_sig(descriptive.to_dict()),
        "model_based": None if scores is None else round_sig(scores.to_dict()),
        "model_based_error": scores_error,
    }
    rep["classifications"] = classifications
    if selection is not None:
        rep["selection"] = round_sig(selection.to_dict())
    return rep


def write_json(doc: Mapping, target) -> None:
    try:
        with _open(target, "w") as fh:
            json.dump(doc, fh, indent=1, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise DataError(f"cannot write {target}: {exc}", "IO_ERROR") from None


def write_report(fit, inference, scores, path, **kwargs) -> dict:
    """Build and write a report; returns the document written."""
    doc = build_report(fit, inference, scores, **kwargs)
    write_json(doc, path)
    return doc


def read_report(source) -> dict:
    try:
        with _open(source, "r") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"report is not valid JSON: {exc}", "PARSE_ERROR") from None
    except OSError as exc:
        raise DataError(f"cannot read {source}: {exc}", "IO_ERROR") from None
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported report format (expected format_version {FORMAT_VERSION!r})",
                        "SCHEMA_ERROR")
    return doc


def fit_from_report(doc: Mapping):
    """(config, theta, cov or None, n_items, n_facilities) recorded in a fit report."""
    if "config" not in doc or "theta" not in doc or "panel" not in doc:
        raise DataError("report carries no fitted model", "SCHEMA_ERROR")
    config = ModelConfig.from_dict(doc["config"])
    J, H = int(doc["panel"]["n_items"]), int(doc["panel"]["n_facilities"])
    layout = Layout(config, J, H)
    t = doc["theta"]
    theta = Parameters(np.asarray(t.get("beta", []), dtype=float),
                       np.asarray(t.get("gamma", []), dtype=float).reshape(layout.gamma_shape),
                       np.asarray(t["lambda"], dtype=float))
    cov = None
    inf = doc.get("inference")
    if inf and inf.get("covariance") is not None:
        cov = np.array([[np.nan if v is None else v for v in row] for row in inf["covariance"]],
                       dtype=float)
    return config, theta, cov, J, H


def write_states_csv(panel: PanelData, post: np.ndarray, states: np.ndarray, target) -> None:
    """One row per subject-occasion: modal state and posterior probabilities."""
    k = post.shape[1]
    with _open(target, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "occasion", "state"] + [f"post_{c + 1}" for c in range(k)])
        row = 0
        for s in panel.subjects:
            for t in range(s.n_occasions):
                w.writerow([s.subject_id, t + 1, int(states[row])] +
                           [f"{p:.{SIG_DIGITS}g}" for p in post[row]])
                row += 1


__all__ = ["BASE_COLUMNS", "FORMAT_VERSION", "build_report", "fit_from_report", "parse_panel_csv",
           "read_report", "round_sig", "write_json", "write_panel_csv", "write_report",
           "write_states_csv"]
