"""Seeded path simulation and estimators for the walk-maximum tail.

Estimates carry three separately reported uncertainties: sampling error
(``stderr``), certified truncation bias from early path stopping
(``bias_bound``), and counts of paths the stopping rules could not decide.

Reproducibility: work is split into fixed-size blocks of paths; block ``i``
always draws from the ``i``-th spawn of the master seed sequence and results
merge in block order.  The shard count therefore only controls scheduling --
identical configurations produce identical bytes for any shard count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .increments import IncrementModel, ModelError, PointMass, PolyExp, TwoPoint

__all__ = [
    "EstimatorError",
    "SimConfig",
    "EstimatorReport",
    "ProfileTable",
    "RenewalTable",
    "estimate_tail_crude",
    "estimate_bigjump_sum",
    "bigjump_conditional_ratio",
    "exceedance_time_profile",
    "renewal_diagnostics",
]

CRUDE_BIAS_FRACTION = 1e-3
MAX_UNDECIDED_FRACTION = 1e-3
RENEWAL_MISS_BOUND = 1e-4


class EstimatorError(RuntimeError):
    """Estimator refusal (undecidable paths, unusable stopping rule, ...)."""


@dataclass(frozen=True)
class SimConfig:
    """Simulation budget and determinism controls.

    ``slack`` overrides the derived stopping slack K; ``block_size`` fixes the
    deterministic unit of work (changing it changes the stream layout, so it
    is part of the reproducibility contract alongside ``seed``).
    """

    n_paths: int
    seed: int = 0
    n_shards: int = 1
    block_size: int = 65536
    horizon: int = 100_000
    slack: float | None = None
    trace: bool = False  # debug: per-path outcome records on supported estimators

    def __post_init__(self):
        if self.n_paths < 1:
            raise EstimatorError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.block_size < 1 or self.n_shards < 1 or self.horizon < 1:
            raise EstimatorError("block_size, n_shards and horizon must be >= 1")


@dataclass
class EstimatorReport:
    """Point estimate with separated stochastic and systematic error."""

    method: str
    model: str
    estimate: float
    stderr: float
    n_paths: int
    n_effective: int
    bias_bound: float
    seed: int
    params: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    trace: list | None = None  # per-path debug rows; never serialized to JSON

    def __post_init__(self):
        if self.stderr < 0 or self.bias_bound < 0:
            raise EstimatorError("stderr and bias_bound must be nonnegative")

    def to_json_dict(self) -> dict:
        est = self.estimate
        return {
            "method": self.method,
            "model": self.model,
            "estimate": None if (isinstance(est, float) and math.isnan(est)) else est,
            "stderr": self.stderr,
            "bias_bound": self.bias_bound,
            "n_paths": self.n_paths,
            "n_effective": self.n_effective,
            "seed": self.seed,
            "params": dict(sorted(self.params.items())),
            "flags": dict(sorted(self.flags.items())),
        }


def _blocks(cfg: SimConfig) -> list[tuple[int, int]]:
    spans = []
    start = 0
    while start < cfg.n_paths:
        count = min(cfg.block_size, cfg.n_paths - start)
        spans.append((len(spans), count))
        start += count
    return spans


def _run_blocks(cfg: SimConfig, block_fn: Callable[[np.random.Generator, int], dict]) -> list[dict]:
    """Run ``block_fn(rng, n_paths_in_block)`` over all blocks, in block order.

    Results are returned ordered by block index regardless of scheduling, so
    any downstream reduction is deterministic.
    """
    spans = _blocks(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(spans))

    def run(span):
        i, count = span
        return block_fn(np.random.default_rng(seeds[i]), count)

    if cfg.n_shards > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_shards) as ex:
            return list(ex.map(run, spans))
    return [run(s) for s in spans]


def _merge_sums(results: list[dict]) -> dict:
    out: dict = {}
    for r in results:
        for k, v in r.items():
            if k in out:
                out[k] = out[k] + v
            else:
                out[k] = v.copy() if isinstance(v, np.ndarray) else v
    return out


def _binomial_stderr(hits: float, n: int) -> float:
    p = hits / n
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _crude_slack(model: IncrementModel, x: float, cfg: SimConfig) -> float:
    """Stopping slack K with certified false-miss probability at most
    ``CRUDE_BIAS_FRACTION`` of the expected estimate scale."""
    if cfg.slack is not None:
        return cfg.slack
    scale = float(model.tail(x))
    if scale <= 0.0:
        # step-tail families: anchor the scale on the certified bound instead
        scale = 1e-2 * model.max_tail_bound(x)
    if scale <= 0.0:
        return 1.0  # maximum is certifiably below x; any slack works
    return model.slack_for_bias(CRUDE_BIAS_FRACTION * scale)


def _check_undecided(undecided: int, n: int, method: str) -> None:
    if undecided > MAX_UNDECIDED_FRACTION * n:
        raise EstimatorError(
            f"{method}: {undecided}/{n} paths hit the horizon before a stopping "
            "rule fired; raise the horizon or the slack"
        )


def estimate_tail_crude(model: IncrementModel, x: float, cfg: SimConfig) -> EstimatorReport:
    """Crude estimate of P(M > x): follow each path until it exceeds x (hit)
    or drops below x - K (certified miss)."""
    K = _crude_slack(model, x, cfg)
    bias = model.max_tail_bound(K)
    stop_lo = x - K

    def block(rng: np.random.Generator, n: int) -> dict:
        S = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        outcome = np.zeros(n, dtype=np.int8)  # 0 undecided, 1 hit, 2 miss
        steps = np.zeros(n, dtype=np.int64)
        hits = 0
        for _ in range(cfg.horizon):
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                break
            S[idx] += model.sample(rng, idx.size)
            steps[idx] += 1
            s = S[idx]
            hit = s > x
            miss = ~hit & (s < stop_lo)
            hits += int(hit.sum())
            outcome[idx[hit]] = 1
            outcome[idx[miss]] = 2
            alive[idx[hit | miss]] = False
        out = {"hits": hits, "undecided": int(alive.sum())}
        if cfg.trace:
            out["trace"] = [
                {"outcome": ("undecided", "hit", "miss")[o], "steps": int(k), "final_s": float(v)}
                for o, k, v in zip(outcome, steps, S)
            ]
        return out

    results = _run_blocks(cfg, block)
    trace = None
    if cfg.trace:
        trace = [row for r in results for row in r.pop("trace")]
    total = _merge_sums(results)
    _check_undecided(total["undecided"], cfg.n_paths, "estimate_tail_crude")
    n = cfg.n_paths
    return EstimatorReport(
        method="crude_tail",
        model=model.spec_string(),
        estimate=total["hits"] / n,
        stderr=_binomial_stderr(total["hits"], n),
        n_paths=n,
        n_effective=n - total["undecided"],
        bias_bound=bias,
        seed=cfg.seed,
        params={"x": x, "slack": K},
        flags={"undecided": total["undecided"]},
        trace=trace,
    )


def _geometric_remainder(model: IncrementModel, x: float, n_cut: int) -> float:
    """Certified bound on the neglected terms sum_{n > n_cut} P(first-jump
    event at step n): sup_y e^{a y} tail(y) * e^{-a x} * phi(a)^n_cut / (1-phi(a)),
    minimized over usable twists a."""
    if isinstance(model, PolyExp):
        alphas = [model.gamma, 0.75 * model.gamma, 0.5 * model.gamma]
    else:
        hi = 1.0
        while model.mgf(hi).value < 1.0 and hi < 1e3:
            hi *= 2.0
        alphas = list(np.linspace(hi / 40.0, hi * 0.999, 40))
    best = math.inf
    for a in alphas:
        phi = model.mgf(float(a)).value
        if not (phi < 1.0):
            continue
        b = _twist_tail_sup(model, float(a)) * math.exp(-a * x) * phi**n_cut / (1.0 - phi)
        best = min(best, b)
    return best


def _twist_tail_sup(model: IncrementModel, alpha: float) -> float:
    """sup_y exp(alpha*y) * P(xi > y)."""
    if isinstance(model, PolyExp):
        if alpha > model.gamma:
            raise ModelError("twist above the decay rate has no finite envelope")
        return math.exp(-alpha * model.shift)
    if isinstance(model, TwoPoint):
        # step tail: the envelope peaks at the left edge of each level piece
        return max(math.exp(alpha * model.v), model.pu * math.exp(alpha * model.u))
    if isinstance(model, PointMass):
        return math.exp(alpha * model.v)
    raise ModelError(f"no twist envelope rule for {type(model).__name__}")


def estimate_bigjump_sum(
    model: IncrementModel, x: float, a: float, n_cut: int, cfg: SimConfig
) -> EstimatorReport:
    """Smoothed estimate of the total probability that the walk first leaves
    the band below ``a`` by jumping straight above ``x``.

    Per path and step n with the running maximum still at or below ``a``, the
    analytic jump probability tail(x - S_{n-1}) is accumulated; the result is
    unbiased for the n <= n_cut partial sum and, because the per-step events
    are disjoint and all imply M > x, it is a certified stochastic lower bound
    for P(M > x) up to the reported geometric remainder.
    """
    if not (x > a >= 0):
        raise EstimatorError(f"need x > a >= 0, got x={x}, a={a}")
    remainder = _geometric_remainder(model, x, n_cut)

    def block(rng: np.random.Generator, n: int) -> dict:
        S = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        scores = np.zeros(n)
        for _ in range(n_cut):
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                break
            scores[idx] += np.asarray(model.tail(x - S[idx]), dtype=float)
            S[idx] += model.sample(rng, idx.size)
            alive[idx[S[idx] > a]] = False  # running max has left the band
        return {"sum": float(scores.sum()), "sumsq": float(scores @ scores)}

    total = _merge_sums(_run_blocks(cfg, block))
    n = cfg.n_paths
    mean = total["sum"] / n
    var = max(total["sumsq"] / n - mean * mean, 0.0)
    report = EstimatorReport(
        method="bigjump_sum",
        model=model.spec_string(),
        estimate=mean,
        stderr=math.sqrt(var / n),
        n_paths=n,
        n_effective=n,
        bias_bound=remainder,
        seed=cfg.seed,
        params={"x": x, "a": a, "n_cut": n_cut},
        flags={},
    )
    if remainder > 0.1 * max(mean, 1e-300):
        report.flags["n_cut_too_small"] = True
    return report


def _h_of(h_choice: str, x: float) -> float:
    if h_choice == "quarter":
        return x / 4.0
    if h_choice == "sqrt":
        return math.sqrt(x)
    raise EstimatorError(f"h_choice must be 'quarter' or 'sqrt', got {h_choice!r}")


def bigjump_conditional_ratio(
    model: IncrementModel, x: float, h_choice: str, cfg: SimConfig
) -> EstimatorReport:
    """Of the paths whose maximum exceeds x, the fraction whose first climb
    above a = h(x) overshot straight past x - h(x).

    Numerator and denominator share paths (common random numbers), so the
    ratio is a conditional relative frequency with binomial error.
    """
    a = _h_of(h_choice, x)
    K = _crude_slack(model, x, cfg)
    stop_lo = x - K
    bias = model.max_tail_bound(K)

    def block(rng: np.random.Generator, n: int) -> dict:
        S = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        crossed = np.zeros(n, dtype=bool)
        big = np.zeros(n, dtype=bool)
        # per-path record: step of the first climb above the band, and of the
        # first exceedance of x (0 = never); at most one band exit fires
        cross_step = np.zeros(n, dtype=np.int64)
        exceed_step = np.zeros(n, dtype=np.int64)
        hits = 0
        big_hits = 0
        for step in range(1, cfg.horizon + 1):
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                break
            S[idx] += model.sample(rng, idx.size)
            s = S[idx]
            first = ~crossed[idx] & (s > a)
            big[idx[first]] = s[first] > x - a
            crossed[idx[first]] = True
            cross_step[idx[first]] = step
            hit = s > x
            exceed_step[idx[hit]] = step
            hits += int(hit.sum())
            big_hits += int((hit & big[idx]).sum())
            alive[idx[hit | (s < stop_lo)]] = False
        out = {"hits": hits, "big_hits": big_hits, "undecided": int(alive.sum())}
        if cfg.trace:
            out["trace"] = [
                {
                    "band_exit_step": int(c),
                    "overshot_band": bool(b),
                    "exceed_step": int(e),
                }
                for c, b, e in zip(cross_step, big, exceed_step)
            ]
        return out

    results = _run_blocks(cfg, block)
    trace = None
    if cfg.trace:
        trace = [row for r in results for row in r.pop("trace")]
    total = _merge_sums(results)
    _check_undecided(total["undecided"], cfg.n_paths, "bigjump_conditional_ratio")
    hits = total["hits"]
    flags = {"undecided": total["undecided"]}
    if hits == 0:
        flags["inconclusive"] = True
        estimate, stderr = math.nan, 0.0
    else:
        estimate = total["big_hits"] / hits
        stderr = _binomial_stderr(total["big_hits"], hits)
    return EstimatorReport(
        method="bigjump_conditional_ratio",
        model=model.spec_string(),
        estimate=estimate,
        stderr=stderr,
        n_paths=cfg.n_paths,
        n_effective=hits,
        bias_bound=bias,
        seed=cfg.seed,
        params={"x": x, "h_choice": h_choice, "a": a, "slack": K},
        flags=flags,
        trace=trace,
    )


@dataclass
class ProfileTable:
    """P(max by step N exceeds x | max ever exceeds x) over an N grid."""

    model: str
    x: float
    rows: list[dict]
    n_hits: int
    n_paths: int
    seed: int
    flags: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "method": "exceedance_time_profile",
            "model": self.model,
            "x": self.x,
            "rows": self.rows,
            "n_hits": self.n_hits,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "flags": dict(sorted(self.flags.items())),
        }


def exceedance_time_profile(
    model: IncrementModel, x: float, n_grid: Sequence[int], cfg: SimConfig
) -> ProfileTable:
    """Conditional distribution of the first time the walk exceeds x."""
    n_grid = sorted(int(N) for N in n_grid)
    if n_grid and n_grid[0] < 0:
        raise EstimatorError("horizon grid entries must be >= 0")
    K = _crude_slack(model, x, cfg)
    stop_lo = x - K

    def block(rng: np.random.Generator, n: int) -> dict:
        S = np.zeros(n)
        alive = np.ones(n, dtype=bool)
        counts = np.zeros(len(n_grid), dtype=np.int64)
        hits = 0
        for step in range(1, cfg.horizon + 1):
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                break
            S[idx] += model.sample(rng, idx.size)
            s = S[idx]
            hit = s > x
            n_hit = int(hit.sum())
            if n_hit:
                hits += n_hit
                for j, N in enumerate(n_grid):
                    if step <= N:
                        counts[j] += n_hit
            alive[idx[hit | (s < stop_lo)]] = False
        return {"hits": hits, "counts": counts, "undecided": int(alive.sum())}

    total = _merge_sums(_run_blocks(cfg, block))
    _check_undecided(total["undecided"], cfg.n_paths, "exceedance_time_profile")
    hits = int(total["hits"])
    rows = []
    for j, N in enumerate(n_grid):
        if hits == 0:
            rows.append({"N": N, "estimate": None, "stderr": 0.0})
        else:
            c = int(total["counts"][j])
            rows.append(
                {"N": N, "estimate": c / hits, "stderr": _binomial_stderr(c, hits)}
            )
    flags = {"undecided": int(total["undecided"])}
    if hits == 0:
        flags["inconclusive"] = True
    return ProfileTable(
        model=model.spec_string(),
        x=x,
        rows=rows,
        n_hits=hits,
        n_paths=cfg.n_paths,
        seed=cfg.seed,
        flags=flags,
    )


@dataclass
class RenewalTable:
    """Estimated crossing probability and twisted crossing moment of the
    tilted barrier R + n*c, per barrier offset R."""

    model: str
    drift_c: float
    gamma: float
    rows: list[dict]
    n_paths: int
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "method": "renewal_diagnostics",
            "model": self.model,
            "drift_c": self.drift_c,
            "gamma": self.gamma,
            "rows": self.rows,
            "n_paths": self.n_paths,
            "seed": self.seed,
        }


def _shifted_cross_slack(model: IncrementModel, c: float, gamma: float | None) -> tuple[float, float, float]:
    """Slack K_r, its certified miss bound, and the twist used, for crossings
    of the line R + n*c by the walk (equivalently level crossings of the
    c-shifted walk, whose increments are xi - c)."""
    if isinstance(model, PolyExp):
        cands = [0.5 * model.gamma, 0.75 * model.gamma, 0.9 * model.gamma]
    else:
        cands = list(np.linspace(0.1, 20.0, 60))
    usable = []
    for a in cands:
        m = model.mgf(float(a))
        if m.finite and m.value * math.exp(-a * c) < 1.0:
            usable.append((float(a), m.value * math.exp(-a * c)))
    if not usable:
        raise EstimatorError("no usable twist for the shifted walk; lower |c|")
    best = None
    for a, phi in usable:
        k = (math.log(1.0 / (RENEWAL_MISS_BOUND * (1.0 - phi)))) / a
        if best is None or k < best[0]:
            best = (k, RENEWAL_MISS_BOUND, a)
    return best


def renewal_diagnostics(
    model: IncrementModel,
    r_grid: Sequence[float],
    cfg: SimConfig,
    gamma: float | None = None,
    drift_c: float | None = None,
) -> RenewalTable:
    """Estimate, per barrier offset R, the probability delta that the walk
    ever exceeds the drifted line R + n*c, and the twisted moment
    E[exp(gamma * S) at the first crossing; crossing happens].

    ``c`` defaults to half the (negative) mean, strictly between the drift
    and 0.  Paths are stopped with a certificate once the shifted walk falls
    a slack K_r below the line; the per-path neglected contributions are
    accumulated into the reported bias bounds.
    """
    if gamma is None:
        if isinstance(model, PolyExp):
            gamma = model.gamma
        else:
            raise EstimatorError("gamma must be given for families without a decay rate")
    mean = model.mean()
    if not mean < 0:
        raise EstimatorError(f"renewal diagnostics need a negative mean, got {mean}")
    c = drift_c if drift_c is not None else (mean / 2.0 if math.isfinite(mean) else -1.0)
    if not (mean < c < 0 or (not math.isfinite(mean) and c < 0)):
        raise EstimatorError(f"drift constant must lie in (mean, 0), got {c}")
    K_r, miss_bound, twist = _shifted_cross_slack(model, c, gamma)
    phg = model.mgf(gamma).value if model.mgf(gamma).finite else math.inf
    phi_ratio = phg / (1.0 - phg) if phg < 1.0 else math.inf

    rows = []
    for R in r_grid:
        R = float(R)

        def block(rng: np.random.Generator, n: int, _R=R) -> dict:
            S = np.zeros(n)
            alive = np.ones(n, dtype=bool)
            hits = 0
            phi_sum = 0.0
            phi_sumsq = 0.0
            phi_bias = 0.0
            for step in range(1, cfg.horizon + 1):
                idx = np.nonzero(alive)[0]
                if idx.size == 0:
                    break
                S[idx] += model.sample(rng, idx.size)
                line = _R + step * c
                s = S[idx]
                hit = s > line
                if hit.any():
                    w = np.exp(gamma * s[hit])
                    hits += int(hit.sum())
                    phi_sum += float(w.sum())
                    phi_sumsq += float(w @ w)
                miss = ~hit & (s < line - K_r)
                if miss.any() and math.isfinite(phi_ratio):
                    phi_bias += float(np.exp(gamma * s[miss]).sum()) * phi_ratio
                alive[idx[hit | miss]] = False
            return {
                "hits": hits,
                "phi_sum": phi_sum,
                "phi_sumsq": phi_sumsq,
                "phi_bias": phi_bias,
                "undecided": int(alive.sum()),
            }

        total = _merge_sums(_run_blocks(cfg, block))
        n = cfg.n_paths
        delta = total["hits"] / n
        phi_mean = total["phi_sum"] / n
        phi_var = max(total["phi_sumsq"] / n - phi_mean * phi_mean, 0.0)
        rows.append(
            {
                "R": R,
                "delta": delta,
                "delta_stderr": _binomial_stderr(total["hits"], n),
                "delta_bias_bound": miss_bound,
                "phi": phi_mean,
                "phi_stderr": math.sqrt(phi_var / n),
                "phi_bias_bound": total["phi_bias"] / n,
                "undecided": int(total["undecided"]),
            }
        )
    return RenewalTable(
        model=model.spec_string(),
        drift_c=c,
        gamma=gamma,
        rows=rows,
        n_paths=cfg.n_paths,
        seed=cfg.seed,
    )
