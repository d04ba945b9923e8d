"""Exact lattice oracle for the maximum of a negative-drift random walk.

An increment law is discretized onto a uniform grid (cell ``k`` covers
``((k-1/2)h, (k+1/2)h]``) and the laws of the all-time maximum ``M``, the
finite-horizon maxima ``M_N``, and the maximum up to the first strictly
negative sum are computed by dynamic programming with the reflected kernel

    V_{n+1} = reflect_0(V_n (*) pmf),

which is the distributional recursion ``M =d (M + xi)^+``.  All convolutions
are direct summations: per-bin results then carry relative (not absolute)
accuracy, which is what lets the exponential moments of the far tail be
certified.  Every law keeps explicit truncation bookkeeping; nothing is ever
silently renormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .increments import IncrementModel, ModelError, PointMass, PolyExp, TwoPoint

__all__ = [
    "LatticeError",
    "Bracket",
    "LatticePMF",
    "MaxLaw",
    "StoppedLaw",
    "BigJumpFlow",
    "default_span",
    "discretize",
    "convolve",
    "convolution_power",
    "convolution_power_tail",
    "lindley_fixed_point",
    "finite_horizon",
    "stopped_max_sigma1",
    "exp_moment",
    "bigjump_flow",
]

MASS_TOL = 1e-12
FOLD_REFUSE = 1e-6
DEFAULT_FOLD = 1e-15
DEFAULT_FIXED_POINT_TOL = 1e-13
MAX_ITERATIONS = 10**6
DIRECT_CONV_LIMIT = 1 << 24  # len(a)*len(b) above this switches the generic op to FFT


class LatticeError(RuntimeError):
    """Grid oracle refusal; carries diagnostics where useful."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class Bracket(NamedTuple):
    """A value with a certified enclosure [lo, hi]."""

    value: float
    lo: float
    hi: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def scale(self, c: float) -> "Bracket":
        if c >= 0:
            return Bracket(self.value * c, self.lo * c, self.hi * c)
        return Bracket(self.value * c, self.hi * c, self.lo * c)


def _interp_tail(probs: np.ndarray, k0: int, h: float, x: float) -> float:
    """P(law > x) treating each cell's mass as uniform on the cell."""
    # cell containing x: (b-1/2)h < x <= (b+1/2)h
    b = int(math.ceil(x / h - 0.5 - 1e-9))
    i = b - k0
    if i < 0:
        return float(probs.sum())
    if i >= len(probs):
        return 0.0
    t = float(probs[i + 1 :].sum())
    frac = ((b + 0.5) * h - x) / h
    return t + float(probs[i]) * frac


@dataclass
class LatticePMF:
    """Probability mass vector on the uniform grid ``{k*h : k0 <= k}``.

    ``mass_below``/``mass_above`` record how much true mass was folded into
    the end bins at discretization time; the vector itself always sums to 1.
    """

    h: float
    k0: int
    probs: np.ndarray
    mass_below: float = 0.0
    mass_above: float = 0.0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.h <= 0:
            raise LatticeError(f"grid step must be positive, got {self.h}")
        if self.probs.ndim != 1 or self.probs.size < 1:
            raise LatticeError("probs must be a nonempty 1-D vector")
        if np.any(self.probs < -1e-15):
            raise LatticeError("probs must be nonnegative")
        self.probs = np.maximum(self.probs, 0.0)
        total = self.probs.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise LatticeError(f"probs must sum to 1 within {MASS_TOL:g}, got {total!r}")

    def centers(self) -> np.ndarray:
        return (self.k0 + np.arange(self.probs.size)) * self.h

    def mean(self) -> float:
        return float(self.centers() @ self.probs)

    def mgf(self, alpha: float) -> float:
        """E exp(alpha * X) for the lattice law; always finite (bounded support)."""
        logs = alpha * self.centers()
        m = logs.max()
        return float(math.exp(m) * (np.exp(logs - m) @ self.probs))

    def tail(self, x: float) -> float:
        return _interp_tail(self.probs, self.k0, self.h, x)

    def chernoff_alpha_sup(self) -> float:
        """Largest twist alpha with mgf(alpha) < 1 (0 if none exists)."""
        if self.mean() >= 0:
            return 0.0
        if self.centers()[-1] <= 0:
            return math.inf  # no mass above 0: mgf < 1 for every alpha > 0
        lo, hi = 0.0, 1.0
        while self.mgf(hi) < 1.0 and hi < 1e4:
            lo, hi = hi, hi * 2.0
        if self.mgf(hi) < 1.0:
            return hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.mgf(mid) < 1.0:
                lo = mid
            else:
                hi = mid
        return lo

    def chernoff_tail_bound(self, t: float) -> float:
        """min over alpha of exp(-alpha t)/(1 - mgf(alpha)): a certified bound
        on P(sup_n S_n > t) for the walk with these lattice increments."""
        a_sup = self.chernoff_alpha_sup()
        if a_sup == 0.0:
            return 1.0
        if math.isinf(a_sup):
            return 0.0 if t >= 0 else 1.0
        best = 1.0
        for a in np.linspace(a_sup * 1e-3, a_sup * (1 - 1e-6), 400):
            p = self.mgf(float(a))
            if p < 1.0:
                best = min(best, math.exp(-a * t) / (1.0 - p))
        return best


def default_span(model: IncrementModel, fold: float = DEFAULT_FOLD) -> tuple[float, float]:
    """Span [lo, hi] with true increment mass outside it below ``fold``.

    The smooth family has hard left support, so only the right tail is ever
    folded.  Atomic families get their exact support.
    """
    if isinstance(model, PolyExp):
        return (-model.shift, model.inverse_tail(fold))
    if isinstance(model, TwoPoint):
        return (model.v, model.u)
    if isinstance(model, PointMass):
        return (model.v, model.v)
    raise ModelError(f"no default span rule for {type(model).__name__}")


def discretize(
    model: IncrementModel,
    h: float,
    span: tuple[float, float] | None = None,
    allow_fold: bool = False,
) -> LatticePMF:
    """Bin the increment law: probs[k] = F((k+1/2)h) - F((k-1/2)h).

    End bins absorb all mass beyond the span and the folded amounts are
    recorded.  Refuses when more than ``FOLD_REFUSE`` would be folded, unless
    ``allow_fold`` is set.
    """
    if h <= 0:
        raise LatticeError(f"grid step must be positive, got {h}")
    if span is None:
        span = default_span(model)
    lo, hi = span
    if lo > hi:
        raise LatticeError(f"empty span {span}")
    k_lo = int(math.floor(lo / h))
    k_hi = int(math.ceil(hi / h))
    ks = np.arange(k_lo, k_hi + 1)
    if isinstance(model, PolyExp):
        # difference of tails, assembled in the log domain: relative accuracy
        # survives far into the right tail
        lt_lo = np.asarray(model.log_tail((ks - 0.5) * h))
        lt_hi = np.asarray(model.log_tail((ks + 0.5) * h))
        probs = -np.exp(lt_lo) * np.expm1(lt_hi - lt_lo)
    else:
        edges = (np.concatenate([ks, [k_hi + 1]]) - 0.5) * h
        tails = np.asarray(model.tail(edges), dtype=float)
        probs = tails[:-1] - tails[1:]
    probs = np.maximum(probs, 0.0)
    below = float(model.cdf((k_lo - 0.5) * h))
    above = float(model.tail((k_hi + 0.5) * h))
    folded = below + above
    if folded > FOLD_REFUSE and not allow_fold:
        raise LatticeError(
            f"span {span} folds mass {folded:.3e} > {FOLD_REFUSE:g}; "
            "widen the span or pass allow_fold"
        )
    probs[0] += below
    probs[-1] += above
    # absorb float residue of the binning itself into the largest bin
    probs[int(np.argmax(probs))] += 1.0 - probs.sum()
    return LatticePMF(h=h, k0=k_lo, probs=probs, mass_below=below, mass_above=above)


def _convolve_raw(a: np.ndarray, b: np.ndarray, method: str = "auto") -> np.ndarray:
    if method == "auto":
        method = "direct" if a.size * b.size <= DIRECT_CONV_LIMIT else "fft"
    if method == "direct":
        return np.convolve(a, b)
    if method == "fft":
        out = fftconvolve(a, b)
        return np.maximum(out, 0.0)
    raise LatticeError(f"unknown convolution method {method!r}")


def convolve(a: LatticePMF, b: LatticePMF, method: str = "direct") -> LatticePMF:
    """Distribution of the sum of independent lattice variables.

    ``method`` is "direct" (exact summation, the default: per-bin results keep
    relative accuracy, which deep-tail work needs), "fft", or "auto".  The FFT
    path must agree with direct summation to 1e-12 in the sup norm; its
    clipped roundoff noise (~1e-16 per bin) makes it unfit below that scale.
    """
    if a.h != b.h:
        raise LatticeError(f"grid step mismatch: {a.h} vs {b.h}")
    probs = _convolve_raw(a.probs, b.probs, method)
    probs = probs / probs.sum()  # remove float-level drift, never visible above 1e-15
    return LatticePMF(
        h=a.h,
        k0=a.k0 + b.k0,
        probs=probs,
        mass_below=a.mass_below + b.mass_below,
        mass_above=a.mass_above + b.mass_above,
    )


def convolution_power(pmf: LatticePMF, n: int, method: str = "direct") -> list[LatticePMF]:
    """Laws of S_1, ..., S_n (n-fold convolutions), computed iteratively."""
    if n < 1:
        raise LatticeError(f"need n >= 1, got {n}")
    out = [pmf]
    for _ in range(n - 1):
        out.append(convolve(out[-1], pmf, method))
    return out


def convolution_power_tail(pmf: LatticePMF, n: int, x_grid) -> list[dict]:
    """Tails of the n-fold convolution at the grid points."""
    law = convolution_power(pmf, n)[-1]
    return [{"n": n, "x": float(x), "tail": law.tail(float(x))} for x in x_grid]


@dataclass
class MaxLaw:
    """Law of a walk maximum on ``{0, h, 2h, ...}`` up to ``top``.

    ``trunc_bound`` certifies P(max > top); ``overflow`` is the mass actually
    lost above the grid during the recursion (the only mass deficit — the
    vector plus ``overflow`` accounts for exactly 1).
    """

    h: float
    probs: np.ndarray
    increment: LatticePMF
    trunc_bound: float
    overflow: float = 0.0
    n_iter: int = 0
    final_delta: float = 0.0
    horizon: int | None = None  # None: all-time maximum

    @property
    def top(self) -> float:
        return (len(self.probs) - 1) * self.h

    def centers(self) -> np.ndarray:
        return np.arange(len(self.probs)) * self.h

    def tail(self, x: float) -> float:
        """P(max > x); excludes overflow mass.

        Bin 0 is the reflection atom at exactly 0 (not cell-smeared mass), so
        any x >= 0 excludes it entirely; higher bins interpolate linearly
        within their cells.
        """
        if x < 0:
            return float(self.probs.sum())
        return _interp_tail(self.probs[1:], 1, self.h, x)

    def window(self, x: float, t: float) -> float:
        """P(max in (x, x+t])."""
        if t <= 0:
            raise LatticeError(f"window width must be positive, got {t}")
        return self.tail(x) - self.tail(x + t)

    def total_mass(self) -> float:
        return float(self.probs.sum()) + self.overflow

    def csv_rows(self) -> list[dict]:
        rows = []
        run = 1.0
        for k, p in enumerate(self.probs):
            run -= float(p)
            rows.append(
                {
                    "x": k * self.h,
                    "pmf": float(p),
                    "tail": max(run, 0.0),
                    "trunc_bound": self.trunc_bound,
                }
            )
        return rows


def _reflected_engine(
    pmf: LatticePMF,
    top: float,
    tol: float,
    n_steps: int | None,
    keep_all: bool,
    max_iter: int = MAX_ITERATIONS,
):
    """Iterate V <- reflect_0(V (*) pmf) from the point mass at 0.

    Runs exactly ``n_steps`` steps when given, else until the sup-norm change
    drops below ``tol``.  Mass pushed above ``top`` accumulates as overflow
    and never returns (its effect anywhere is bounded by the accumulated
    amount).
    """
    if pmf.mean() >= 0 and n_steps is None:
        raise LatticeError(f"fixed point needs a negative mean, got {pmf.mean():.6g}")
    K = int(round(top / pmf.h))
    if K < 1:
        raise LatticeError(f"top {top} is below one grid step")
    if pmf.k0 >= 0:
        raise LatticeError("increment law has no mass below 0; walk cannot reflect")
    nneg = -pmf.k0
    V = np.zeros(K + 1)
    V[0] = 1.0
    overflow = 0.0
    history = [(V.copy(), 0.0)] if keep_all else None
    delta = math.inf
    n = 0
    while True:
        if n_steps is not None and n >= n_steps:
            break
        if n_steps is None and delta < tol:
            break
        if n >= max_iter:
            raise LatticeError(
                f"no convergence within {max_iter} iterations", residual=delta
            )
        W = np.convolve(V, pmf.probs)
        V2 = np.zeros(K + 1)
        V2[0] = W[: nneg + 1].sum()
        body = W[nneg + 1 : nneg + 1 + K]
        V2[1 : 1 + body.size] = body
        overflow += W[nneg + 1 + K :].sum()
        if overflow > 1e-3:
            # a sound grid loses ~1e-30 per sweep; this is a sizing mistake,
            # and waiting for the drained iteration to settle takes forever
            raise LatticeError(
                f"grid top {top} far too small: overflow {overflow:.3e} "
                f"after {n} iterations",
                residual=overflow,
            )
        delta = float(np.abs(V2 - V).max())
        V = V2
        n += 1
        if keep_all:
            history.append((V.copy(), overflow))
    return V, overflow, n, delta, history


def _auto_top(pmf: LatticePMF) -> float:
    """Grid top such that the walk-maximum mass beyond it is below ~1e-24."""
    a_sup = pmf.chernoff_alpha_sup()
    if a_sup == 0.0:
        raise LatticeError("cannot size the grid: no subcritical twist exists")
    if math.isinf(a_sup):
        return pmf.h  # maximum is identically 0
    anchor = 0.75 * a_sup
    return -math.log(1e-24 * (1.0 - pmf.mgf(anchor))) / anchor


def lindley_fixed_point(
    pmf: LatticePMF,
    tol: float = DEFAULT_FIXED_POINT_TOL,
    top: float | None = None,
    max_iter: int = MAX_ITERATIONS,
) -> MaxLaw:
    """Law of the all-time maximum M = sup_n S_n via the reflected recursion.

    Iterates from the point mass at 0 until the sup-norm step change drops
    below ``tol``.  Each iterate is exactly the law of the n-step maximum, so
    ``finite_horizon`` reuses this engine.
    """
    if pmf.mean() >= 0:
        raise LatticeError(f"fixed point needs a negative mean, got {pmf.mean():.6g}")
    if top is None:
        top = _auto_top(pmf)
    V, overflow, n, delta, _ = _reflected_engine(pmf, top, tol, None, False, max_iter)
    K = len(V) - 1
    return MaxLaw(
        h=pmf.h,
        probs=V,
        increment=pmf,
        trunc_bound=pmf.chernoff_tail_bound(K * pmf.h),
        overflow=overflow,
        n_iter=n,
        final_delta=delta,
    )


def finite_horizon(
    pmf: LatticePMF,
    N: int,
    top: float | None = None,
) -> list[MaxLaw]:
    """Laws of M_0, ..., M_N (M_0 identically 0) from the same recursion."""
    if N < 0:
        raise LatticeError(f"horizon must be >= 0, got {N}")
    if top is None:
        top = _auto_top(pmf)
    _, _, _, _, history = _reflected_engine(pmf, top, 0.0, N, True)
    K = int(round(top / pmf.h))
    trunc = min(pmf.chernoff_tail_bound(K * pmf.h), 1.0)
    out = []
    for n, (V, leaked) in enumerate(history):
        out.append(
            MaxLaw(
                h=pmf.h,
                probs=V,
                increment=pmf,
                trunc_bound=trunc,
                overflow=leaked,
                n_iter=n,
                final_delta=0.0,
                horizon=n,
            )
        )
    return out


@dataclass
class StoppedLaw:
    """Joint output of the first-negative-sum stopping analysis.

    ``chi`` is the law of the overshoot below 0 (conditional on absorption,
    which is certain up to ``residual``); ``survival[n]`` is the probability
    the walk has stayed nonnegative through step n; ``max_tail`` holds
    P(max before stopping > x) at the requested levels.
    """

    h: float
    chi: LatticePMF
    absorbed: float
    residual: float
    survival: np.ndarray
    max_tail_x: np.ndarray
    max_tail: np.ndarray
    horizon_used: int

    def csv_rows(self) -> list[dict]:
        """Overshoot law first, then the stopped-maximum tails."""
        rows = []
        run = 1.0
        for k, p in enumerate(self.chi.probs):
            run -= float(p)
            rows.append(
                {
                    "kind": "overshoot",
                    "x": (self.chi.k0 + k) * self.h,
                    "pmf": float(p) * self.absorbed,
                    "tail": max(run, 0.0) * self.absorbed,
                    "trunc_bound": self.residual,
                }
            )
        for x, t in zip(self.max_tail_x, self.max_tail):
            rows.append(
                {
                    "kind": "stopped_max",
                    "x": float(x),
                    "pmf": "",
                    "tail": float(t),
                    "trunc_bound": self.residual,
                }
            )
        return rows


def _absorbing_sweep(pmf: LatticePMF, upper_cells: int, residual_tol: float, horizon: int):
    """Run the kernel on cells [0, upper_cells], absorbing strictly below 0 and
    (separately) strictly above upper_cells.  Returns (below-absorption vector
    by overshoot cell, above-absorbed mass, survival trace, residual)."""
    nneg = -pmf.k0
    if nneg <= 0:
        raise LatticeError("increment law has no mass below 0; stopping time is infinite")
    S = np.zeros(upper_cells + 1)
    S[0] = 1.0
    chi_cells = np.zeros(nneg + 1)  # overshoot cell j means chi = j*h, j >= 1
    up_mass = 0.0
    survival = [1.0]
    n = 0
    while n < horizon:
        W = np.convolve(S, pmf.probs)
        absorbed_below = W[:nneg]  # landing cells pmf.k0 .. -1
        chi_cells[1:] += absorbed_below[::-1]
        up = W[nneg + upper_cells + 1 :].sum()
        up_mass += float(up)
        S = W[nneg : nneg + upper_cells + 1].copy()
        n += 1
        # paths above the working top are still unabsorbed, hence still alive
        survival.append(float(S.sum()) + up_mass)
        if S.sum() + up_mass < residual_tol:
            break
    return chi_cells, up_mass, np.array(survival), float(S.sum()), n


def stopped_max_sigma1(
    pmf: LatticePMF,
    horizon: int = 100_000,
    x_grid: Sequence[float] | None = None,
    residual_tol: float = 1e-12,
    top: float | None = None,
) -> StoppedLaw:
    """Overshoot and maximum up to the first strictly negative partial sum.

    The overshoot law comes from one absorbing sweep on the nonnegative cells.
    P(max before stopping > x) is a first-passage probability (reach above x
    before dropping below 0); it is computed by a separate two-barrier sweep
    per requested level.  When ``x_grid`` is omitted the full per-cell tail is
    produced, which is intended for the small atomic validation grids.
    """
    if pmf.mean() >= 0:
        raise LatticeError(f"stopping analysis needs a negative mean, got {pmf.mean():.6g}")
    if top is None:
        top = _auto_top(pmf)
    upper_cells = int(round(top / pmf.h))

    chi_cells, up_mass, survival, residual, n_run = _absorbing_sweep(
        pmf, upper_cells, residual_tol, horizon
    )
    # mass that escaped above the working grid is below the chernoff bound at top;
    # it is part of the residual bookkeeping rather than the overshoot law
    residual += up_mass
    if residual > max(100 * residual_tol, 1e-9):
        raise LatticeError(
            f"stopping-time horizon {horizon} exhausted with residual {residual:.3e}",
            residual=residual,
        )
    absorbed = float(chi_cells.sum())
    conserved = absorbed + residual
    if abs(conserved - 1.0) > 1e-10:
        raise LatticeError(f"absorption bookkeeping off by {conserved - 1.0:.2e}")
    chi = LatticePMF(h=pmf.h, k0=0, probs=chi_cells / absorbed)

    if x_grid is None:
        if upper_cells > 4096:
            raise LatticeError(
                "full stopped-max law needs a per-cell sweep; pass x_grid for "
                f"large grids ({upper_cells} cells)"
            )
        x_grid = [(k + 0.5) * pmf.h for k in range(upper_cells)]
    xs = np.asarray(list(x_grid), dtype=float)
    tails = np.array([_first_passage_up(pmf, float(x), horizon, residual_tol) for x in xs])
    return StoppedLaw(
        h=pmf.h,
        chi=chi,
        absorbed=absorbed,
        residual=residual,
        survival=survival,
        max_tail_x=xs,
        max_tail=tails,
        horizon_used=n_run,
    )


def _first_passage_up(pmf: LatticePMF, x: float, horizon: int, residual_tol: float) -> float:
    """P(walk exceeds x before its first strictly negative sum)."""
    nneg = -pmf.k0
    kx = int(math.floor(x / pmf.h + 1e-9))  # cells with center <= x survive
    if kx < 0:
        return 1.0
    S = np.zeros(kx + 1)
    S[0] = 1.0
    up = 0.0
    for _ in range(horizon):
        W = np.convolve(S, pmf.probs)
        up += float(W[nneg + kx + 1 :].sum())
        S = W[nneg : nneg + kx + 1].copy()
        if S.sum() < residual_tol * 1e-3:
            break
    return up


def exp_moment(
    law: MaxLaw | LatticePMF,
    gamma: float,
    max_remainder: float = 1e-3,
) -> Bracket:
    """Sum of exp(gamma * k * h) against the law, with a certified enclosure.

    For a positive twist on a walk-maximum law the mass beyond the grid top is
    controlled by a steeper-twist bound built from the increment law's own
    lattice mgf: for any alpha in (gamma, alpha_sup) with phi(alpha) < 1,

        E[e^{gamma M}; M > top] <= e^{-(alpha-gamma) top}
                                   * (1 + gamma/(alpha-gamma)) / (1 - phi(alpha)).

    The enclosure also charges the recursion's lost overflow mass at the top.
    Raises when the certified remainder exceeds ``max_remainder``.

    A lattice pmf input (bounded support) or a nonpositive twist needs no
    remainder; the enclosure is then the bare float sum.
    """
    if isinstance(law, LatticePMF):
        val = law.mgf(gamma)
        return Bracket(val, val, val)
    centers = law.centers()
    logs = gamma * centers
    m = float(logs.max()) if gamma > 0 else 0.0
    val = float(math.exp(m) * (np.exp(logs - m) @ law.probs))
    if gamma <= 0:
        # truncated mass contributes within [overflow * e^{gamma*top}, overflow]
        return Bracket(val, val, val + law.overflow)
    top = law.top
    inc = law.increment
    a_sup = inc.chernoff_alpha_sup()
    if a_sup <= gamma:
        raise LatticeError(
            f"cannot certify twist {gamma}: increment lattice admits no twist "
            f"beyond {a_sup:.4f} with subcritical mgf"
        )
    remainder = math.inf
    upper = min(a_sup * (1 - 1e-9), 8.0 * gamma)
    for a in np.linspace(gamma + 1e-3 * (upper - gamma), upper, 400):
        p = inc.mgf(float(a))
        if p < 1.0:
            b = (
                math.exp(-(a - gamma) * top)
                * (1.0 + gamma / (a - gamma))
                / (1.0 - p)
            )
            remainder = min(remainder, b)
    slop = law.overflow * math.exp(gamma * top)
    if not math.isfinite(remainder) or remainder + slop > max_remainder:
        raise LatticeError(
            f"twist remainder {remainder + slop:.3e} exceeds {max_remainder:g}; "
            "raise the grid top"
        )
    return Bracket(float(val), float(max(val - slop, 0.0)), float(val + remainder + slop))


@dataclass
class BigJumpFlow:
    """First exceedances of ``jump_level`` by paths whose running maximum
    stayed at or below ``barrier`` beforehand.

    ``landing_k0``/``landing_mass`` give the accumulated landing distribution
    (sub-probability, by cell); ``per_step[n-1]`` is the step-n contribution;
    ``tilt_at_stop`` is the remaining exp(gamma .)-weighted occupation used
    for the stopping certificate (None when run to the full step budget).
    """

    h: float
    landing_k0: int
    landing_mass: np.ndarray
    per_step: list[float]
    n_run: int
    tilt_at_stop: float | None

    def total(self) -> float:
        return float(self.landing_mass.sum())


def bigjump_flow(
    pmf: LatticePMF,
    barrier: float,
    jump_level: float,
    n_max: int = 10_000,
    gamma: float | None = None,
    rel_tol: float = 1e-9,
    floor: float | None = None,
) -> BigJumpFlow:
    """Dynamic program over the disjoint events
    {max through step n-1 <= barrier, S_n > jump_level}.

    Per step the surviving sub-law (paths still at or below the barrier) is
    convolved with the increments; landings above ``jump_level`` are recorded,
    landings in (barrier, jump_level] leave the computation for good, and the
    rest survives.  With ``gamma`` given, iteration stops once the remaining
    exp(gamma .)-weighted occupation certifies that future contributions are
    below ``rel_tol`` of the accumulated total.
    """
    if not jump_level > barrier:
        raise LatticeError(f"need jump_level > barrier, got {jump_level} <= {barrier}")
    h = pmf.h
    if floor is None:
        # survivors below the floor cannot matter: their jump probability is
        # exponentially small in the gap; 30 decay lengths is plenty
        floor = -(30.0 / gamma if gamma else 30.0 / abs(min(pmf.mean(), -1e-2)))
    k_bar = int(math.floor(barrier / h + 1e-9))  # cells with center <= barrier
    k_jump = int(math.floor(jump_level / h + 1e-9))  # landing means center > jump_level
    k_floor = int(math.floor(floor / h))
    if k_floor > 0 or k_floor >= k_bar:
        raise LatticeError(f"floor {floor} must lie below 0 and below the barrier")
    nb = k_bar - k_floor + 1
    nu = np.zeros(nb)
    nu[-k_floor] = 1.0
    landing_k0 = k_jump + 1
    landing = np.zeros(0)
    per_step: list[float] = []
    tilt = None
    n = 0
    for n in range(1, n_max + 1):
        W = np.convolve(nu, pmf.probs)
        base = k_floor + pmf.k0
        jump_start = landing_k0 - base
        flow = W[jump_start:] if jump_start < W.size else np.zeros(0)
        if flow.size > landing.size:
            landing = np.concatenate([landing, np.zeros(flow.size - landing.size)])
        landing[: flow.size] += flow
        per_step.append(float(flow.sum()))
        start = k_floor - base
        nu = W[start : start + nb].copy()
        if gamma is not None:
            cells = np.arange(k_floor, k_bar + 1)
            tilt = float((nu * np.exp(gamma * cells * h)).sum())
            # future landings are bounded by sup_y e^{gamma y} T(y) * e^{-gamma level}
            # * tilt / (1 - phi); the constant prefactor is conservative at 1
            remaining = math.exp(-gamma * jump_level) * tilt / max(1.0 - pmf.mgf(gamma), 1e-12)
            total = sum(per_step)
            if remaining < rel_tol * max(total, 1e-300):
                break
    return BigJumpFlow(
        h=h,
        landing_k0=landing_k0,
        landing_mass=landing,
        per_step=per_step,
        n_run=n,
        tilt_at_stop=tilt,
    )
