"""Predicted tail constants and convergence bookkeeping.

For subcritical twist (twisted increment moment phg < 1) the walk-maximum
tail is asymptotically proportional to the increment tail; the constant is

    C = E exp(gamma*M) / (1 - phg),

with E exp(gamma*M) taken from the grid oracle (it has no closed form in the
increment law) and carried as a certified enclosure.  The derived constants
for windowed, finite-horizon, and stopped variants are assembled here, along
with the report type that compares a prediction against measured ratios over
an increasing level grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .increments import IncrementModel, ModelError, PolyExp
from .lattice import Bracket, LatticePMF, LatticeError, MaxLaw, StoppedLaw, exp_moment

__all__ = [
    "AsymptoticConstants",
    "ConvergenceReport",
    "constants",
    "local_constant",
    "finite_constant",
    "stopped_constant",
    "lambda_partial_sums",
    "convolution_prediction",
    "convergence_report",
]


@dataclass(frozen=True)
class AsymptoticConstants:
    """All constants predicted for a subcritical model.

    ``constant`` is C = (twisted maximum moment)/(1 - phg); ``c_lo``/``c_hi``
    are the a-priori enclosure 1/(1-phg) <= C <= 1/(1-phg)**2 that follows
    from 1 <= E exp(gamma*M) <= 1/(1-phg).
    """

    gamma: float
    phg: float
    exp_moment_m: Bracket
    constant: Bracket
    c_lo: float
    c_hi: float

    def to_json_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "phg": self.phg,
            "exp_moment_m": {"value": self.exp_moment_m.value,
                             "lo": self.exp_moment_m.lo, "hi": self.exp_moment_m.hi},
            "constant": {"value": self.constant.value,
                         "lo": self.constant.lo, "hi": self.constant.hi},
            "c_lo": self.c_lo,
            "c_hi": self.c_hi,
        }


def _resolve_gamma(model: IncrementModel, gamma: float | None) -> float:
    if gamma is not None:
        return float(gamma)
    if isinstance(model, PolyExp):
        return model.gamma
    raise ModelError(
        "model family has no intrinsic decay rate; pass the twist explicitly"
    )


def constants(
    model: IncrementModel,
    max_law: MaxLaw,
    gamma: float | None = None,
    max_remainder: float = 1e-3,
) -> AsymptoticConstants:
    """Assemble the predicted constants from the oracle maximum law."""
    g = _resolve_gamma(model, gamma)
    phg = model.mgf(g).value
    if not phg < 1.0:
        raise ModelError(f"twisted moment {phg:.6f} >= 1; no subcritical constant")
    em = exp_moment(max_law, g, max_remainder=max_remainder)
    c = em.scale(1.0 / (1.0 - phg))
    c_lo = 1.0 / (1.0 - phg)
    c_hi = c_lo * c_lo
    if not (c_lo - 1e-9 <= c.value <= c_hi + 1e-9):
        raise LatticeError(
            f"constant {c.value:.6f} escapes its a-priori enclosure "
            f"[{c_lo:.6f}, {c_hi:.6f}]; the oracle law is inconsistent"
        )
    return AsymptoticConstants(
        gamma=g, phg=phg, exp_moment_m=em, constant=c, c_lo=c_lo, c_hi=c_hi
    )


def local_constant(consts: AsymptoticConstants, t: float) -> Bracket:
    """Predicted window constant C * (1 - exp(-gamma*t)) for P(M in (x, x+t])."""
    if not t > 0:
        raise ModelError(f"window width must be positive, got {t}")
    factor = 1.0 - math.exp(-consts.gamma * t) if math.isfinite(t) else 1.0
    return consts.constant.scale(factor)


def finite_constant(
    consts: AsymptoticConstants,
    N: int,
    horizon_laws: Sequence[MaxLaw],
    max_remainder: float = 1e-3,
) -> Bracket:
    """Predicted horizon-N constant: sum_{n=1}^{N} phg^{n-1} * E exp(gamma*M_{N-n}).

    ``horizon_laws`` must contain the maxima laws for horizons 0..N-1 (index
    by horizon).  The horizon-0 law is the point mass at zero, so its moment
    is exactly 1.
    """
    if N < 1:
        raise ModelError(f"need N >= 1, got {N}")
    if len(horizon_laws) < N:
        raise ModelError(f"need laws for horizons 0..{N-1}, got {len(horizon_laws)}")
    val = lo = hi = 0.0
    for n in range(1, N + 1):
        w = consts.phg ** (n - 1)
        if N - n == 0:
            em = Bracket(1.0, 1.0, 1.0)
        else:
            em = exp_moment(horizon_laws[N - n], consts.gamma, max_remainder=max_remainder)
        val += w * em.value
        lo += w * em.lo
        hi += w * em.hi
    return Bracket(val, lo, hi)


def stopped_constant(consts: AsymptoticConstants, stopped: StoppedLaw) -> Bracket:
    """Predicted stopped-walk constant (1 - E exp(-gamma*overshoot)) * C.

    The sweep residual (paths not yet absorbed) enters the enclosure of the
    overshoot moment; the overshoot is strictly positive by construction.
    """
    chi = stopped.chi
    if float(chi.probs[1:].sum()) <= 0.0:
        raise ModelError("degenerate overshoot law: no mass above 0")
    e_cond = chi.mgf(-consts.gamma)
    # E[exp(-gamma*chi); absorbed] plus an unabsorbed remainder in [0, residual]
    e_lo = stopped.absorbed * e_cond
    e_hi = min(e_lo + stopped.residual, 1.0)
    factor_lo = 1.0 - e_hi
    factor_hi = 1.0 - e_lo
    c = consts.constant
    return Bracket(
        (1.0 - stopped.absorbed * e_cond) * c.value,
        factor_lo * c.lo,
        factor_hi * c.hi,
    )


def lambda_partial_sums(
    consts: AsymptoticConstants,
    N: int,
    a_grid: Sequence[float],
    step_laws: Sequence[LatticePMF],
    max_law: MaxLaw,
) -> list[dict]:
    """Partial sums over n <= N of
    lambda(n, a) = E[exp(gamma*S_{n-1}); S_{n-1} <= a] - P(M > a) * exp(gamma*a).

    ``step_laws[j]`` must be the law of S_j (so index 0 is the point mass at
    0).  Each partial sum approaches sum phg^{n-1} as ``a`` grows and
    1/(1 - phg) as both grow.
    """
    if len(step_laws) < N:
        raise ModelError(f"need step laws for S_0..S_{N-1}, got {len(step_laws)}")
    g = consts.gamma
    span_top = min(
        (
            (law.k0 + law.probs.size - 1) * law.h
            for law in step_laws[:N]
            if law.probs.size > 1
        ),
        default=math.inf,
    )
    rows = []
    for a in a_grid:
        a = float(a)
        if a > span_top:
            raise ModelError(
                f"threshold {a} lies beyond the step-law span {span_top:.2f}"
            )
        penalty = max_law.tail(a) * math.exp(g * a)
        partial = 0.0
        geom = 0.0
        for n in range(1, N + 1):
            law = step_laws[n - 1]
            centers = law.centers()
            mask = centers <= a + 1e-12
            restricted = float((law.probs[mask] * np.exp(g * centers[mask])).sum())
            lam = restricted - penalty
            partial += lam
            geom += consts.phg ** (n - 1)
            rows.append(
                {
                    "n": n,
                    "a": a,
                    "lambda": lam,
                    "partial_sum": partial,
                    "geometric_sum": geom,
                }
            )
    return rows


def convolution_prediction(components: Sequence[tuple[IncrementModel, float]],
                           gamma: float | None = None) -> float:
    """Predicted ratio of an independent-sum tail to the reference tail.

    Each component is (model, c) where c is the tail-equivalence constant of
    the component against the reference law.  The prediction is
    prod_i phg_i * sum_i c_i / phg_i.
    """
    if not components:
        raise ModelError("need at least one component")
    g = _resolve_gamma(components[0][0], gamma)
    prod = 1.0
    acc = 0.0
    for model, c in components:
        phg = model.mgf(g).value
        if not math.isfinite(phg):
            raise ModelError(f"component {model.spec_string()} has infinite twisted moment")
        prod *= phg
        acc += c / phg
    return prod * acc


VERDICT_CONVERGING = "converging"
VERDICT_INCONCLUSIVE = "inconclusive"
VERDICT_DIVERGING = "diverging"


@dataclass
class ConvergenceReport:
    """Measured-vs-predicted table over an increasing level grid.

    ``verdict`` is "converging" only when the absolute relative deviations
    strictly decrease along the grid and the final one is within ``tol``;
    strictly increasing deviations give "diverging", anything else is
    "inconclusive".  ``loose_trend`` additionally records whether the final
    deviation improved on the first (useful for quantities whose deviation
    passes through zero on the way in).
    """

    predicted: float
    tol: float
    provenance: str
    rows: list[dict]
    verdict: str
    loose_trend: bool
    final_dev: float

    def to_json_dict(self) -> dict:
        return {
            "predicted": self.predicted,
            "tol": self.tol,
            "provenance": self.provenance,
            "rows": self.rows,
            "verdict": self.verdict,
            "loose_trend": self.loose_trend,
            "final_dev": self.final_dev,
        }

    def csv_rows(self) -> list[dict]:
        return [
            {
                "x": r["x"],
                "measured": r["measured"],
                "predicted": self.predicted,
                "ratio": r["ratio"],
                "dev": r["dev"],
            }
            for r in self.rows
        ]


def convergence_report(
    predicted: float,
    measured: Sequence[tuple[float, float]],
    tol: float = 0.1,
    provenance: str = "oracle",
) -> ConvergenceReport:
    """Compare measured values against a predicted constant over a level grid."""
    if len(measured) < 3:
        raise ModelError(f"need at least 3 grid points, got {len(measured)}")
    xs = [float(x) for x, _ in measured]
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise ModelError("level grid must be strictly increasing")
    if any(v <= 0 for _, v in measured):
        raise ModelError("measured values must be positive")
    if predicted <= 0:
        raise ModelError("predicted constant must be positive")
    rows = []
    devs = []
    for x, v in measured:
        ratio = float(v) / predicted
        dev = abs(ratio - 1.0)
        rows.append(
            {"x": float(x), "measured": float(v), "ratio": ratio, "dev": dev}
        )
        devs.append(dev)
    # a deviation already at numerical zero may stay there
    strictly_down = all(b < a or b <= 1e-12 for a, b in zip(devs, devs[1:]))
    strictly_up = all(b > a for a, b in zip(devs, devs[1:]))
    if strictly_down and devs[-1] <= tol:
        verdict = VERDICT_CONVERGING
    elif strictly_up:
        verdict = VERDICT_DIVERGING
    else:
        verdict = VERDICT_INCONCLUSIVE
    return ConvergenceReport(
        predicted=predicted,
        tol=tol,
        provenance=provenance,
        rows=rows,
        verdict=verdict,
        loose_trend=devs[-1] < devs[0],
        final_dev=devs[-1],
    )
