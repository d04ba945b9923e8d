"""Batch command-line front end.

Every command resolves all of its defaults up front into a run manifest that
is embedded in each output file, so outputs are reproducible byte-for-byte
from their own metadata.  Timing is written to stderr only; the payload never
contains volatile fields.

Exit codes: 0 pass, 1 usage error, 2 computational refusal or failed verdict.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .increments import (
    IncrementModel,
    ModelError,
    PolyExp,
    lgamma_diagnostic,
    parse_model,
    sgamma_diagnostic,
)
from .lattice import (
    LatticeError,
    LatticePMF,
    MaxLaw,
    bigjump_flow,
    convolution_power,
    discretize,
    finite_horizon,
    lindley_fixed_point,
    stopped_max_sigma1,
)
from .montecarlo import (
    EstimatorError,
    SimConfig,
    bigjump_conditional_ratio,
    estimate_tail_crude,
    renewal_diagnostics,
)
from .asymptotics import (
    AsymptoticConstants,
    constants,
    convergence_report,
    convolution_prediction,
    finite_constant,
    local_constant,
    stopped_constant,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_REFUSED = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract here reserves 2 for
    computational refusals, so remap usage problems to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(_usage_error(f"{self.prog}: error: {message}"))


def _usage_error(message: str) -> int:
    print(message, file=sys.stderr)
    return EXIT_USAGE


def _refused(message: str) -> int:
    print(message, file=sys.stderr)
    return EXIT_REFUSED


# --- deterministic emission -----------------------------------------------------

def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n").encode()


def _csv_bytes(rows: list[dict]) -> bytes:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue().encode()


def _emit(out: str, name: str, payload: dict, csv_rows: list[dict] | None = None) -> None:
    if out == "-":
        sys.stdout.write(_json_bytes(payload).decode())
        return
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{name}.json").write_bytes(_json_bytes(payload))
    if csv_rows is not None:
        (outdir / f"{name}.csv").write_bytes(_csv_bytes(csv_rows))


def _manifest(command: str, model_spec: str, params: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "walkmax",
        "tool_version": __version__,
        "command": command,
        "model": model_spec,
        "params": dict(sorted(params.items())),
    }


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


# --- shared pipelines -------------------------------------------------------------

def oracle_pmf(model: IncrementModel, h: float, fold: float = 1e-15,
               span_hi: float | None = None) -> LatticePMF:
    """Increment lattice for the oracle pipelines."""
    if span_hi is None:
        return discretize(model, h)
    if not isinstance(model, PolyExp):
        return discretize(model, h)
    return discretize(model, h, span=(-model.shift, span_hi))


def oracle_top(model: IncrementModel, gamma: float | None) -> float | None:
    """Grid top for maximum laws: 75 decay lengths keeps both the tail range
    and the twisted-moment remainder certified."""
    if isinstance(model, PolyExp):
        return 75.0 / model.gamma
    if gamma is not None:
        return 75.0 / gamma
    return None  # lattice sizes itself from the increment law


def constants_pipeline(
    model: IncrementModel,
    h: float = 0.01,
    gamma: float | None = None,
    tol: float = 1e-13,
) -> tuple[LatticePMF, MaxLaw, AsymptoticConstants]:
    pmf = oracle_pmf(model, h)
    law = lindley_fixed_point(pmf, tol=tol, top=oracle_top(model, gamma))
    return pmf, law, constants(model, law, gamma=gamma)


def tail_ratio_rows(model: IncrementModel, law: MaxLaw, xs) -> list[tuple[float, float]]:
    return [(float(x), law.tail(float(x)) / float(model.tail(float(x)))) for x in xs]


def bigjump_dp_ratio(
    model: IncrementModel,
    pmf: LatticePMF,
    law: MaxLaw,
    x: float,
    h_choice: str,
    rel_tol: float = 1e-12,
) -> float:
    """Conditional single-jump ratio measured on the lattice: the flow of
    first exceedances of x - h(x) from below the h(x) band, each landing
    weighted by the probability the remaining walk carries it past x."""
    a = x / 4.0 if h_choice == "quarter" else math.sqrt(x)
    gamma = model.gamma if isinstance(model, PolyExp) else None
    flow = bigjump_flow(pmf, barrier=a, jump_level=x - a, gamma=gamma, rel_tol=rel_tol)
    cells = flow.landing_k0 + np.arange(flow.landing_mass.size)
    weights = np.array([1.0 if y < 0 else law.tail(y) for y in x - cells * pmf.h])
    numerator = float(flow.landing_mass @ weights)
    return numerator / law.tail(x)


# --- commands ----------------------------------------------------------------------

def cmd_verify_class(args) -> int:
    model = parse_model(args.model)
    xs = _floats(args.x)
    ks = _floats(args.k)
    lg = lgamma_diagnostic(model, ks, xs)
    sg = sgamma_diagnostic(model, args.h_choice, xs)
    payload = {
        "manifest": _manifest("verify-class", args.model, _resolved_params(args)),
        "shifted_tail_ratio": {
            "rows": lg.rows, "summary": lg.summary, "passed": lg.passed,
            "not_in_class": lg.flagged_out_of_class, "notes": lg.notes,
        },
        "middle_band_mass": {
            "rows": sg.rows, "summary": sg.summary, "passed": sg.passed,
            "not_in_class": sg.flagged_out_of_class, "notes": sg.notes,
        },
    }
    _emit(args.out, "verify_class", payload)
    if lg.flagged_out_of_class:
        print("not_in_class: lattice family, smooth-tail diagnostics skipped",
              file=sys.stderr)
        return EXIT_OK
    return EXIT_OK if (lg.passed and sg.passed) else EXIT_REFUSED


def cmd_constants(args) -> int:
    model = parse_model(args.model, require_subcritical=False)
    gamma = args.gamma
    try:
        pmf, law, consts = constants_pipeline(model, h=args.step, gamma=gamma)
    except (ModelError, LatticeError) as exc:
        return _refused(f"constants: {exc}")
    payload = {
        "manifest": _manifest("constants", args.model,
                              {"step": args.step, "gamma": gamma}),
        "constants": consts.to_json_dict(),
        "oracle": {
            "top": law.top,
            "iterations": law.n_iter,
            "final_delta": law.final_delta,
            "trunc_bound": law.trunc_bound,
            "overflow": law.overflow,
            "mass_at_zero": float(law.probs[0]),
        },
    }
    if float(law.probs[0]) > 1.0 - 1e-12:
        payload["oracle"]["notice"] = "maximum is identically 0"
    _emit(args.out, "constants", payload)
    return EXIT_OK


def _report_command(args, name: str, measured_rows, predicted: float,
                    extra_payload: dict, gate: str = "strict") -> int:
    report = convergence_report(predicted, measured_rows, tol=args.tol,
                                provenance=args.measured)
    payload = {
        "manifest": _manifest(name, args.model, _resolved_params(args)),
        "report": report.to_json_dict(),
    }
    payload.update(extra_payload)
    _emit(args.out, name.replace("-", "_"), payload, report.csv_rows())
    if gate == "strict":
        ok = report.verdict == "converging"
    else:
        ok = report.loose_trend and report.final_dev <= args.tol
    return EXIT_OK if ok else EXIT_REFUSED


def _resolved_params(args) -> dict:
    skip = {"func", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _mc_config(args) -> SimConfig:
    return SimConfig(
        n_paths=args.n_paths,
        seed=args.seed,
        n_shards=args.shards,
        trace=getattr(args, "trace", False),
    )


def cmd_tail_report(args) -> int:
    model = parse_model(args.model)
    xs = _floats(args.x)
    trace_rows: list[dict] = []
    try:
        pmf, law, consts = constants_pipeline(model, h=args.step)
        if args.measured == "oracle":
            rows = tail_ratio_rows(model, law, xs)
        else:
            cfg = _mc_config(args)
            rows = []
            for x in xs:
                rep = estimate_tail_crude(model, x, cfg)
                rows.append((x, rep.estimate / float(model.tail(x))))
                if rep.trace is not None:
                    trace_rows.extend({"x": x, "path": i, **t} for i, t in enumerate(rep.trace))
    except (ModelError, LatticeError, EstimatorError) as exc:
        return _refused(f"tail-report: {exc}")
    if trace_rows and args.out != "-":
        (Path(args.out)).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "tail_report_trace.csv").write_bytes(_csv_bytes(trace_rows))
    return _report_command(
        args, "tail-report", rows, consts.constant.value,
        {"constants": consts.to_json_dict()},
    )


def cmd_local_report(args) -> int:
    model = parse_model(args.model)
    xs = _floats(args.x)
    try:
        pmf, law, consts = constants_pipeline(model, h=args.step)
        pred = local_constant(consts, args.t)
        rows = [
            (x, law.window(x, args.t) / float(model.tail(x))) for x in map(float, xs)
        ]
    except (ModelError, LatticeError) as exc:
        return _refused(f"local-report: {exc}")
    # windowed deviations legitimately change sign on the way in, so this
    # report gates on the loose trend rather than strict monotonicity
    return _report_command(
        args, "local-report", rows, pred.value,
        {"constants": consts.to_json_dict(), "window": args.t},
        gate="loose",
    )


def cmd_finite(args) -> int:
    model = parse_model(args.model)
    Ns = _ints(args.N)
    xs = _floats(args.x)
    try:
        pmf, law, consts = constants_pipeline(model, h=args.step)
        laws = finite_horizon(pmf, max(Ns), top=oracle_top(model, None))
        rows = []
        for N in Ns:
            fc = finite_constant(consts, N, laws) if N >= 1 else None
            entry = {
                "N": N,
                "predicted": fc.value if fc else 0.0,
                "predicted_lo": fc.lo if fc else 0.0,
                "predicted_hi": fc.hi if fc else 0.0,
            }
            for x in xs:
                entry[f"ratio_at_{x:g}"] = laws[N].tail(x) / float(model.tail(x))
            rows.append(entry)
    except (ModelError, LatticeError) as exc:
        return _refused(f"finite: {exc}")
    payload = {
        "manifest": _manifest("finite", args.model, _resolved_params(args)),
        "constant_limit": consts.to_json_dict(),
        "rows": rows,
    }
    _emit(args.out, "finite", payload, rows)
    return EXIT_OK


def cmd_stopped(args) -> int:
    model = parse_model(args.model)
    xs = _floats(args.x)
    try:
        pmf, law, consts = constants_pipeline(model, h=args.step)
        stopped = stopped_max_sigma1(pmf, x_grid=xs, top=oracle_top(model, None))
        pred = stopped_constant(consts, stopped)
        rows = [
            (float(x), float(t) / float(model.tail(float(x))))
            for x, t in zip(stopped.max_tail_x, stopped.max_tail)
        ]
    except (ModelError, LatticeError) as exc:
        return _refused(f"stopped: {exc}")
    return _report_command(
        args, "stopped", rows, pred.value,
        {
            "constants": consts.to_json_dict(),
            "stopped_constant": {"value": pred.value, "lo": pred.lo, "hi": pred.hi},
            "overshoot_moment": stopped.chi.mgf(-consts.gamma),
            "residual": stopped.residual,
        },
        gate="loose",
    )


def cmd_bigjump(args) -> int:
    model = parse_model(args.model)
    xs = _floats(args.x)
    try:
        if args.measured == "oracle":
            x_top = max(xs)
            a_top = x_top / 4.0 if args.h_choice == "quarter" else math.sqrt(x_top)
            span_hi = None
            if isinstance(model, PolyExp):
                # span must cover jumps past x - h(x) with decay margin
                span_hi = max(
                    model.inverse_tail(1e-15), x_top - a_top + 22.0 / model.gamma
                )
            pmf = oracle_pmf(model, args.step, span_hi=span_hi)
            law = lindley_fixed_point(pmf, top=oracle_top(model, args.gamma))
            rows = [
                {
                    "x": x,
                    "ratio": bigjump_dp_ratio(model, pmf, law, x, args.h_choice),
                    "stderr": 0.0,
                }
                for x in map(float, xs)
            ]
        else:
            cfg = _mc_config(args)
            rows = []
            for x in xs:
                rep = bigjump_conditional_ratio(model, float(x), args.h_choice, cfg)
                rows.append(
                    {
                        "x": float(x),
                        "ratio": None if math.isnan(rep.estimate) else rep.estimate,
                        "stderr": rep.stderr,
                    }
                )
    except (ModelError, LatticeError, EstimatorError) as exc:
        return _refused(f"bigjump: {exc}")
    payload = {
        "manifest": _manifest("bigjump", args.model, _resolved_params(args)),
        "rows": rows,
    }
    _emit(args.out, "bigjump", payload, rows)
    ratios = [r["ratio"] for r in rows if r["ratio"] is not None]
    increasing = all(b > a for a, b in zip(ratios, ratios[1:]))
    ok = bool(ratios) and ratios[-1] >= 0.9 and (increasing or args.measured == "mc")
    return EXIT_OK if ok else EXIT_REFUSED


def cmd_renewal_diag(args) -> int:
    model = parse_model(args.model)
    try:
        table = renewal_diagnostics(
            model, _floats(args.R), _mc_config(args), gamma=args.gamma
        )
    except (ModelError, EstimatorError) as exc:
        return _refused(f"renewal-diag: {exc}")
    payload = {
        "manifest": _manifest("renewal-diag", args.model, _resolved_params(args)),
        "table": table.to_json_dict(),
    }
    _emit(args.out, "renewal_diag", payload, table.rows)
    return EXIT_OK


def cmd_convolution_check(args) -> int:
    model = parse_model(args.model)
    xs = _floats(args.x)
    ns = _ints(args.n)
    try:
        span_hi = None
        if isinstance(model, PolyExp):
            span_hi = max(model.inverse_tail(1e-15), max(xs) + 15.0 / model.gamma)
        pmf = oracle_pmf(model, args.step, span_hi=span_hi)
        powers = convolution_power(pmf, max(ns))
        rows = []
        verdicts = []
        for n in ns:
            pred = convolution_prediction([(model, 1.0)] * n, gamma=args.gamma)
            measured = [
                (x, powers[n - 1].tail(float(x)) / float(model.tail(float(x))))
                for x in xs
            ]
            rep = convergence_report(pred, measured, tol=args.tol, provenance="oracle")
            verdicts.append(rep.verdict == "converging")
            for r in rep.csv_rows():
                rows.append({"n": n, **r})
    except (ModelError, LatticeError) as exc:
        return _refused(f"convolution-check: {exc}")
    payload = {
        "manifest": _manifest("convolution-check", args.model, _resolved_params(args)),
        "rows": rows,
    }
    _emit(args.out, "convolution_check", payload, rows)
    return EXIT_OK if all(verdicts) else EXIT_REFUSED


# --- wiring -----------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, model_required: bool = True) -> None:
    p.add_argument("--model", required=model_required, help="model spec string")
    p.add_argument("--out", default="-", help="output directory, or - for stdout")
    p.add_argument("--step", type=float, default=0.01, help="grid step")
    p.add_argument("--tol", type=float, default=0.1, help="final-deviation tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-paths", type=int, default=100_000, dest="n_paths")
    p.add_argument("--shards", type=int, default=1)
    p.add_argument("--gamma", type=float, default=None,
                   help="twist rate override (required for lattice families)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="walkmax", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-class", help="tail-shape class diagnostics")
    _add_common(p)
    p.add_argument("--x", default="20,40,80")
    p.add_argument("--k", default="0.5,1,2")
    p.add_argument("--h-choice", choices=["quarter", "sqrt"], default="quarter")
    p.set_defaults(func=cmd_verify_class)

    p = sub.add_parser("constants", help="oracle tail constants")
    _add_common(p)
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser("tail-report", help="maximum-tail ratio vs predicted constant")
    _add_common(p)
    p.add_argument("--x", required=True)
    p.add_argument("--measured", choices=["oracle", "mc"], default="oracle")
    p.add_argument("--trace", action="store_true",
                   help="debug: write per-path outcome rows next to the report")
    p.set_defaults(func=cmd_tail_report)

    p = sub.add_parser("local-report", help="windowed tail vs predicted window constant")
    _add_common(p)
    p.add_argument("--x", required=True)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--measured", choices=["oracle"], default="oracle")
    p.set_defaults(func=cmd_local_report)

    p = sub.add_parser("finite", help="finite-horizon constants and ratios")
    _add_common(p)
    p.add_argument("--N", required=True)
    p.add_argument("--x", default="10")
    p.set_defaults(func=cmd_finite)

    p = sub.add_parser("stopped", help="stopped-walk tail vs predicted constant")
    _add_common(p)
    p.add_argument("--x", required=True)
    p.add_argument("--measured", choices=["oracle"], default="oracle")
    p.set_defaults(func=cmd_stopped)

    p = sub.add_parser("bigjump", help="single-jump conditional ratio")
    _add_common(p)
    p.add_argument("--x", default="10,20,40")
    p.add_argument("--h-choice", choices=["quarter", "sqrt"], default="quarter")
    p.add_argument("--measured", choices=["oracle", "mc"], default="oracle")
    p.set_defaults(func=cmd_bigjump)

    p = sub.add_parser("renewal-diag", help="drifted-barrier crossing diagnostics")
    _add_common(p)
    p.add_argument("--R", default="2,4,8,16")
    p.set_defaults(func=cmd_renewal_diag)

    p = sub.add_parser("convolution-check", help="n-fold sum tails vs prediction")
    _add_common(p)
    p.add_argument("--x", default="12,16,20,24")
    p.add_argument("--n", default="2,3")
    p.set_defaults(func=cmd_convolution_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    t0 = time.monotonic()
    try:
        code = args.func(args)
    except ModelError as exc:
        return _usage_error(f"walkmax: {exc}")
    except (LatticeError, EstimatorError) as exc:
        return _refused(f"walkmax: {exc}")
    print(f"walkmax {args.command}: {1000 * (time.monotonic() - t0):.0f} ms",
          file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
