"""Command-line interface: ``lmpanel <subcommand> ...``.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys

from . import __version__, backend
from .em import FitSettings, e_step, fit
from .errors import DataError, LMError, NumericalError
from .inference import infer
from .io import (build_report, fit_from_report, parse_panel_csv, read_report, write_json,
                 write_panel_csv, write_states_csv)
from .likelihood import independence_loglik
from .model import SHARED_UPDOWN, UNRESTRICTED_TRIDIAG, ModelConfig
from .scoring import (classify, descriptive_scores, facility_contrasts, score_facilities,
                      unidimensional_scores)
from .selection import backward_select, bic, r_squared, s_index
from .simulate import RNG_NAME, SimDesign, simulate_panel

log = logging.getLogger("lmpanel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _drops(text):
    return [s for s in (p.strip() for p in text.split(",")) if s]


def _add_fit_options(p):
    p.add_argument("--starts", type=_nonneg_int, default=25, help="random starts besides the deterministic one")
    p.add_argument("--warm-iters", type=_positive_int, default=15, help="EM steps per start")
    p.add_argument("--seed", type=int, default=None, help="master seed (random and printed when absent)")
    p.add_argument("--tol", type=float, default=1e-8, help="relative log-likelihood change for convergence")
    p.add_argument("--max-iter", type=_positive_int, default=5000)
    p.add_argument("--threads", type=_positive_int, default=1, help="maximum worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lmpanel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lmpanel {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a panel from a design file")
    p.add_argument("--design", required=True, help="JSON design (see README)")
    p.add_argument("--out", required=True, help="panel CSV to write")
    p.add_argument("--truth", help="JSON file for the latent state paths")
    p.add_argument("--seed", type=int, default=None, help="overrides the design seed")

    p = sub.add_parser("fit", help="fit one model and write a report")
    p.add_argument("--panel", required=True)
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--model", choices=("m1", "m2"), default="m2")
    p.add_argument("--drop", type=_drops, default=[], help="e.g. init:gender,trans:age")
    p.add_argument("--no-inference", action="store_true", help="skip standard errors")
    p.add_argument("--out", required=True)
    _add_fit_options(p)

    p = sub.add_parser("select", help="backward model selection by BIC")
    p.add_argument("--panel", required=True)
    p.add_argument("--k-max", type=_positive_int, required=True)
    p.add_argument("--out", required=True)
    _add_fit_options(p)

    p = sub.add_parser("score", help="facility scores from a fit report")
    p.add_argument("--report", required=True)
    p.add_argument("--panel", help="panel CSV (descriptive scores and averaged initial probabilities)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("classify", help="posterior state of every subject-occasion")
    p.add_argument("--report", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="print a plain-text summary of a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", help="write the summary here instead of stdout")
    return parser


def _resolve_seed(args):
    if getattr(args, "seed", None) is None:
        args.seed = secrets.randbelow(2**31)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _invocation(args, argv) -> dict:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}
    return {"argv": list(argv), "resolved": resolved, "version": __version__, "backend": backend.BACKEND}


def _echo(inv):
    print("config: " + json.dumps(inv["resolved"], sort_keys=True), file=sys.stderr)


def _settings(args) -> FitSettings:
    return FitSettings(tol=args.tol, max_iter=args.max_iter, n_starts=args.starts,
                       warm_iters=args.warm_iters, seed=args.seed)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args, inv):
    try:
        with open(args.design, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {args.design}: {exc}", "IO_ERROR") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"design is not valid JSON: {exc}", "PARSE_ERROR") from None
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        design = SimDesign.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid design: {exc}", "SCHEMA_ERROR") from None
    panel, paths = simulate_panel(design)
    write_panel_csv(panel, args.out)
    if args.truth:
        write_json({"format_version": "1", "rng": RNG_NAME, "design": design.to_dict(),
                    "states": {s.subject_id: (p + 1).tolist() for s, p in zip(panel.subjects, paths)}},
                   args.truth)
    log.info("wrote %d subjects to %s", panel.n_subjects, args.out)


def _model_scores(theta, cov, panel, config):
    try:
        return score_facilities(theta, cov, panel, config), None
    except NumericalError as exc:
        return None, str(exc)


def cmd_fit(args, inv):
    panel = parse_panel_csv(args.panel)
    mode = UNRESTRICTED_TRIDIAG if args.model == "m1" else SHARED_UPDOWN
    try:
        config = ModelConfig(args.k, mode).drop(args.drop)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = fit(panel, config, _settings(args))
    n = panel.n_subjects
    ll0 = independence_loglik(panel)
    indices = {"bic": bic(res.loglik, res.v, n), "r2": r_squared(res.loglik, ll0, n, panel.n_items),
               "loglik0": ll0, "s_index": None}
    states = None
    if config.k > 1:
        counts, _ = e_step(res.theta_hat, panel, config)
        indices["s_index"] = s_index(counts.post, config.k)
        labels = classify(counts.post)
        off = panel.arrays.offsets
        states = [{"subject_id": s.subject_id, "states": labels[off[i]:off[i + 1]].tolist()}
                  for i, s in enumerate(panel.subjects)]
    inference = None if args.no_inference else infer(res.theta_hat, panel, config)
    for w in (inference.warnings if inference else []):
        log.warning(w)
    scores, err = _model_scores(res.theta_hat, inference.cov if inference else None, panel, config)
    doc = build_report(res, inference, scores, panel=panel, descriptive=descriptive_scores(panel),
                       indices=indices, classifications=states, invocation=inv, rng=RNG_NAME,
                       scores_error=err)
    write_json(doc, args.out)
    print(f"loglik {res.loglik:.6f}  v {res.v}  BIC {indices['bic']:.3f}  "
          f"iterations {res.n_iter}  converged {res.converged}", file=sys.stderr)


def cmd_select(args, inv):
    panel = parse_panel_csv(args.panel)
    report = backward_select(panel, args.k_max, _settings(args), workers=args.threads)
    doc = build_report(panel=panel, invocation=inv, rng=RNG_NAME, selection=report)
    write_json(doc, args.out)
    for row in report.rows:
        shown = "failed" if row.bic is None else f"{row.bic:.3f}"
        print(f"{row.label:<30} k={row.k} v={row.v} BIC={shown}", file=sys.stderr)
    print(f"chosen: {report.chosen_model}", file=sys.stderr)


def cmd_score(args, inv):
    doc = read_report(args.report)
    config, theta, cov, J, H = fit_from_report(doc)
    if config.transition_mode != SHARED_UPDOWN:
        raise NumericalError("facility scores need a fit with --model m2", "NOT_M2")
    panel = parse_panel_csv(args.panel, n_facilities=H) if args.panel else None
    if panel is not None and (panel.n_items != J):
        raise DataError("panel does not match the report's number of items", "SCHEMA_ERROR")
    if panel is not None:
        scores = score_facilities(theta, cov, panel, config)
        desc = descriptive_scores(panel)
    else:
        scores = unidimensional_scores(facility_contrasts(theta, cov, config, J, H))
        desc = None
    out = build_report(invocation=inv, rng=doc.get("rng"), descriptive=desc, scores=scores, panel=panel)
    if desc is None and doc.get("scores"):
        out["scores"]["descriptive"] = doc["scores"].get("descriptive")
    out["config"] = config.to_dict()
    write_json(out, args.out)


def cmd_classify(args, inv):
    doc = read_report(args.report)
    config, theta, _, J, H = fit_from_report(doc)
    panel = parse_panel_csv(args.panel, n_facilities=H)
    if panel.n_items != J:
        raise DataError("panel does not match the report's number of items", "SCHEMA_ERROR")
    counts, _ = e_step(theta, panel, config)
    write_states_csv(panel, counts.post, classify(counts.post), args.out)


def _summary_lines(doc) -> list[str]:
    lines = [f"report format {doc.get('format_version')}, generated {doc.get('generated_at')}"]
    if doc.get("config"):
        c = doc["config"]
        lines.append(f"model: k={c['k']} {c['transition_mode']}  initial covariates: "
                     f"{', '.join(c['init_covariates']) or '-'}  transition covariates: "
                     f"{', '.join(c['trans_covariates']) or '-'}")
    f = doc.get("fit")
    if f:
        lines.append(f"loglik {f.get('loglik')}  v {f.get('v')}  BIC {f.get('bic')}  "
                     f"R2 {f.get('r2')}  S {f.get('s_index')}")
    if doc.get("parameters"):
        lines.append("")
        lines.append(f"{'parameter':<32}{'estimate':>12}{'se':>12}{'z':>10}{'p':>12}")
        for r in doc["parameters"]:
            vals = [r.get(k) for k in ("estimate", "se", "z", "p")]
            cells = ["" if v is None else f"{v:.4g}" for v in vals]
            lines.append(f"{r['name']:<32}{cells[0]:>12}{cells[1]:>12}{cells[2]:>10} {cells[3]:>11}")
    mb = (doc.get("scores") or {}).get("model_based")
    if mb:
        lines.append("")
        lines.append(f"{'facility':>8}{'a1':>10}{'a2':>10}{'a_bar':>10}{'se':>10}{'rank':>6}  quadrant")
        for r in mb["facilities"]:
            def g(key):
                v = r.get(key)
                return "" if v is None else f"{v:.3f}"
            lines.append(f"{r['facility']:>8}{g('a1'):>10}{g('a2'):>10}{g('a_bar'):>10}"
                         f"{g('se_uni'):>10}{r.get('rank') or '':>6}  {r['quadrant']}")
    sel = doc.get("selection")
    if sel:
        lines.append("")
        for r in sel["rows"]:
            lines.append(f"{r['model_label']:<30} k={r['k']} v={r['v']} BIC={r['bic']}")
        lines.append(f"chosen: {sel['chosen_model']}")
    return lines


def cmd_report(args, inv):
    text = "\n".join(_summary_lines(read_report(args.report))) + "\n"
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise DataError(f"cannot write {args.out}: {exc}", "IO_ERROR") from None
    else:
        sys.stdout.write(text)


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select, "score": cmd_score,
            "classify": cmd_classify, "report": cmd_report}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command in ("fit", "select"):
        _resolve_seed(args)
    inv = _invocation(args, argv)
    _echo(inv)
    try:
        COMMANDS[args.command](args, inv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except LMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
