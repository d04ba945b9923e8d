"""Predicted constants and convergence verdicts."""

import math

import numpy as np
import pytest
from scipy import integrate

from walkmax import (
    Bracket,
    ModelError,
    PointMass,
    constants,
    convergence_report,
    convolution_prediction,
    discretize,
    finite_constant,
    lambda_partial_sums,
    lindley_fixed_point,
    local_constant,
    stopped_constant,
    stopped_max_sigma1,
)
from walkmax.asymptotics import AsymptoticConstants
from walkmax.lattice import convolution_power


def degenerate_consts(gamma: float = 1.0, phg: float = 0.5) -> AsymptoticConstants:
    """Constants for a walk whose maximum is identically 0."""
    one = Bracket(1.0, 1.0, 1.0)
    c = 1.0 / (1.0 - phg)
    return AsymptoticConstants(
        gamma=gamma,
        phg=phg,
        exp_moment_m=one,
        constant=Bracket(c, c, c),
        c_lo=c,
        c_hi=c * c,
    )


class TestConstants:
    def test_degenerate_pointmass(self, pm_model):
        law = lindley_fixed_point(discretize(pm_model, 1.0), top=40.0)
        # with twist log 2 the twisted increment moment is exactly 1/2
        consts = constants(pm_model, law, gamma=math.log(2.0))
        assert consts.phg == pytest.approx(0.5, abs=1e-15)
        assert consts.constant.value == pytest.approx(2.0, abs=1e-9)

    def test_apriori_bounds(self, ref_consts):
        assert (ref_consts.c_lo, ref_consts.c_hi) == (2.0, 4.0)
        assert 2.0 < ref_consts.constant.lo
        assert ref_consts.constant.hi < 4.0

    def test_reference_value(self, ref_consts):
        assert ref_consts.phg == pytest.approx(0.5, abs=1e-12)
        # twice the twisted maximum moment
        assert ref_consts.constant.value == pytest.approx(
            2.0 * ref_consts.exp_moment_m.value, rel=1e-15
        )

    def test_supercritical_refused(self, d0_model, ref_law):
        with pytest.raises(ModelError):
            constants(d0_model, ref_law)

    def test_lattice_family_needs_explicit_rate(self, tp_model, tp_law):
        with pytest.raises(ModelError):
            constants(tp_model, tp_law)


class TestLocalConstant:
    def test_infinite_window_recovers_constant(self, ref_consts):
        assert local_constant(ref_consts, math.inf).value == pytest.approx(
            ref_consts.constant.value, rel=1e-15
        )

    def test_half_window_arithmetic(self):
        consts = degenerate_consts(gamma=1.0, phg=0.5)
        got = local_constant(consts, math.log(2.0))
        assert got.value == pytest.approx(1.0, abs=1e-14)  # 2 * (1 - 1/2)

    def test_window_composition_identity(self, ref_consts):
        g = ref_consts.gamma
        for t1, t2 in [(0.5, 0.5), (1.0, 2.0), (0.25, 3.0)]:
            lhs = (
                local_constant(ref_consts, t1).value
                + math.exp(-g * t1) * local_constant(ref_consts, t2).value
            )
            rhs = local_constant(ref_consts, t1 + t2).value
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_bad_window(self, ref_consts):
        with pytest.raises(ModelError):
            local_constant(ref_consts, 0.0)


class TestFiniteConstant:
    def test_single_step_is_one(self, ref_consts, ref_horizon_laws):
        fc = finite_constant(ref_consts, 1, ref_horizon_laws)
        assert fc.value == pytest.approx(1.0, abs=1e-15)

    def test_two_step_against_direct_quadrature(
        self, ref_model, ref_pmf, ref_consts, ref_horizon_laws
    ):
        # horizon-2 value is E e^{g M_1} + phg * E e^{g M_0}; the one-step
        # maximum is xi^+, so its moment is P(xi <= 0) + E[e^{g xi}; xi > 0],
        # with the increment mass folded at the grid's upper edge
        def integrand(x):
            return math.exp(ref_model.gamma * x) * float(ref_model.pdf(x))

        top_cell = (ref_pmf.k0 + ref_pmf.probs.size - 1) * ref_pmf.h
        pos, err = integrate.quad(integrand, 0.0, top_cell, epsabs=1e-12, limit=300)
        assert err < 1e-9
        folded = math.exp(ref_model.gamma * top_cell) * float(
            ref_model.tail(top_cell + ref_pmf.h / 2)
        )
        e_m1 = float(ref_model.cdf(0.0)) + pos + folded
        fc = finite_constant(ref_consts, 2, ref_horizon_laws)
        assert fc.value == pytest.approx(e_m1 + ref_consts.phg, rel=1e-3)

    def test_monotone_and_bounded_by_limit(self, ref_consts, ref_horizon_laws):
        vals = [
            finite_constant(ref_consts, N, ref_horizon_laws).value
            for N in (1, 2, 5, 10, 20, 40, 80)
        ]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        c = ref_consts.constant.value
        assert all(v <= c + 1e-9 for v in vals)

    def test_geometric_remainder(self, ref_consts, ref_horizon_laws):
        # C - fc(N) <= phg^N/(1-phg) * (N + E e^{gM}): the N-linear factor
        # covers the horizon-truncated moments (each one obeys
        # E e^{gM} - E e^{gM_k} <= phg^{k+1}/(1-phg) by the union bound)
        for N in (2, 5, 10, 20, 50):
            fc = finite_constant(ref_consts, N, ref_horizon_laws)
            gap = ref_consts.constant.value - fc.value
            bound = (
                ref_consts.phg**N
                / (1 - ref_consts.phg)
                * (N + ref_consts.exp_moment_m.value)
            )
            assert -5e-11 <= gap <= bound + 2e-11

    def test_missing_laws(self, ref_consts, ref_horizon_laws):
        with pytest.raises(ModelError):
            finite_constant(ref_consts, len(ref_horizon_laws) + 1, ref_horizon_laws)


class TestStoppedConstant:
    def test_constant_overshoot_factor(self):
        consts = degenerate_consts(gamma=1.0, phg=0.5)
        # overshoot identically 1: factor (1 - e^{-1})
        law = lindley_fixed_point(discretize(PointMass(-1.0), 1.0), top=40.0)
        stopped = stopped_max_sigma1(discretize(PointMass(-1.0), 1.0))
        got = stopped_constant(consts, stopped)
        assert got.value == pytest.approx((1 - math.exp(-1.0)) * 2.0, abs=1e-10)

    def test_reference_regime(self, ref_pmf, ref_consts):
        stopped = stopped_max_sigma1(ref_pmf, x_grid=[5.0])
        got = stopped_constant(ref_consts, stopped)
        assert 0.0 < got.value < ref_consts.constant.value
        assert got.lo <= got.value <= got.hi


class TestLambdaPartialSums:
    def test_first_term(self, ref_consts, ref_pmf, ref_law):
        rows = lambda_partial_sums(ref_consts, 1, [5.0], [ref_pmf_delta()], ref_law)
        expected = 1.0 - ref_law.tail(5.0) * math.exp(5.0)
        assert rows[0]["lambda"] == pytest.approx(expected, rel=1e-12)

    def test_first_term_approaches_one(self, ref_consts, ref_pmf, ref_law):
        rows = lambda_partial_sums(
            ref_consts, 1, [5.0, 15.0, 25.0], [ref_pmf_delta()], ref_law
        )
        lams = [r["lambda"] for r in rows]
        assert lams[0] < lams[1] < lams[2] < 1.0
        assert lams[2] == pytest.approx(1.0, abs=1e-3)

    def test_rows_below_geometric_sum(self, ref_consts, ref_pmf, ref_law):
        steps = convolution_power(ref_pmf, 9)
        rows = lambda_partial_sums(
            ref_consts, 10, [25.0], [ref_pmf_delta()] + steps, ref_law
        )
        for r in rows:
            assert r["partial_sum"] <= r["geometric_sum"] * (1 + 1e-6)

    def test_threshold_beyond_span_refused(self, ref_consts, ref_pmf, ref_law):
        with pytest.raises(ModelError):
            lambda_partial_sums(
                ref_consts, 2, [500.0], [ref_pmf_delta(), ref_pmf], ref_law
            )


def ref_pmf_delta():
    """Law of the zero partial sum: unit mass at the origin cell."""
    from walkmax import LatticePMF

    return LatticePMF(h=0.01, k0=0, probs=np.array([1.0]))


class TestConvolutionPrediction:
    def test_single(self, ref_model):
        assert convolution_prediction([(ref_model, 1.0)]) == pytest.approx(1.0)

    def test_identical_pair(self, ref_model):
        # phg^2 * (2/phg) = 2*phg = 1.0 at phg = 1/2
        assert convolution_prediction([(ref_model, 1.0)] * 2) == pytest.approx(1.0)

    def test_identical_triple(self, ref_model):
        assert convolution_prediction([(ref_model, 1.0)] * 3) == pytest.approx(0.75)

    def test_infinite_moment_refused(self, d0_model, ref_model):
        with pytest.raises(ModelError):
            convolution_prediction([(ref_model, 1.0)], gamma=2.0)


class TestConvergenceReport:
    def test_exact_match(self):
        rows = [(x, 2.0) for x in (1.0, 2.0, 3.0)]
        rep = convergence_report(2.0, rows)
        assert rep.verdict == "converging"
        assert rep.final_dev == 0.0

    def test_one_over_x_converges(self):
        rows = [(x, 2.0 * (1 + 1 / x)) for x in (10.0, 20.0, 40.0, 80.0)]
        rep = convergence_report(2.0, rows)
        assert rep.verdict == "converging"

    def test_oscillation_not_converging(self):
        rows = [(x, 2.0 * (1 + math.sin(x))) for x in (1.0, 2.0, 3.0, 4.0, 5.0)]
        rep = convergence_report(2.0, rows)
        assert rep.verdict in ("inconclusive", "diverging")

    def test_diverging(self):
        rows = [(x, 2.0 * (1 + 0.01 * x)) for x in (1.0, 2.0, 3.0)]
        rep = convergence_report(2.0, rows)
        assert rep.verdict == "diverging"

    def test_needs_three_points(self):
        with pytest.raises(ModelError):
            convergence_report(2.0, [(1.0, 2.0), (2.0, 2.0)])

    def test_rejects_nonpositive_measured(self):
        with pytest.raises(ModelError):
            convergence_report(2.0, [(1.0, 2.0), (2.0, -1.0), (3.0, 2.0)])

    def test_rejects_unsorted_grid(self):
        with pytest.raises(ModelError):
            convergence_report(2.0, [(2.0, 2.0), (1.0, 2.0), (3.0, 2.0)])

    def test_csv_rows_carry_prediction(self):
        rows = [(x, 2.0) for x in (1.0, 2.0, 3.0)]
        rep = convergence_report(2.0, rows)
        assert all(r["predicted"] == 2.0 for r in rep.csv_rows())
