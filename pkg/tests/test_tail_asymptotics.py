import dataclasses
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import brentq
from scipy.stats import linregress

from ctmc_core import Mode, TruncationCaps, marginal, model2_prob, solve_model2
from polling_config import D_ZERO_TOL
from polling_errors import BranchError, DomainError, InputError, PrecisionError
from polling_model import PollingParams, normalize_model2
from tail_asymptotics import (
    BoundaryProbs, RegimeKind, TailEstimate, boundary_probs, constants, dominant_radius, eval_pgf,
    fit_decay, kernel_root_alpha, pgf_evaluator, pgf_identities, psi_coefficients, psi_recursion,
    regime, series_coefficients, sigma1, special_values, tail_high_marginal, tail_joint_fixed_high,
    tail_joint_fixed_low, tail_low_marginal, tail_report, tail_total, u_root, x_kernel,
)


@pytest.fixture(scope='module')
def bp(p2, oracle):
    return boundary_probs(oracle, p2)


def _instance(lambda1, lambda2, mu1, mu2, threshold_n=10):
    return normalize_model2(PollingParams(lambda1, lambda2, 0.0, mu1, mu2, 1.0, threshold_n))


def test_constants(p2):
    c = constants(p2)
    # 归一化后 λ1, λ2, μ1, μ2 = 1/19, 3/19, 5/19, 10/19
    assert c.b1 == pytest.approx(3 / (9 - 2 * math.sqrt(5)), rel=1e-12)
    assert c.b1 == pytest.approx(0.662564, abs=1e-6)
    assert c.b2 == pytest.approx(3 / (9 + 2 * math.sqrt(5)), rel=1e-12)
    assert c.c0 == pytest.approx(2 / (9 + math.sqrt(61)), rel=1e-12)
    assert c.c0 == pytest.approx(0.1189750, abs=1e-7)
    assert c.eta1 == pytest.approx((9 + math.sqrt(21)) / 20, rel=1e-12)
    assert c.eta2 == pytest.approx((9 - math.sqrt(21)) / 20, rel=1e-12)
    assert c.D == pytest.approx((math.sqrt(5) - 5) / 361, rel=1e-10)
    assert c.rho_bar1 == pytest.approx(0.8)
    assert 1.0 / c.b1 == pytest.approx(1.509288, abs=1e-6)
    assert (1 - c.eta1) * (1 - c.eta2) == pytest.approx(0.25, abs=1e-12)
    assert c.l3_at_one == pytest.approx(0.5)


def test_constants_require_normalized_params(base):
    with pytest.raises(DomainError):
        constants(base)


def test_unstable_model2_rejected():
    with pytest.raises(DomainError):
        constants(_instance(0.3, 0.8, 0.5, 1.0))


def test_regime_negative(p2):
    reg = regime(p2)
    assert reg.kind == RegimeKind.D_NEGATIVE
    assert reg.decay_rate == pytest.approx(0.662564, abs=1e-6)


def test_kernel_root_alpha(p2):
    assert kernel_root_alpha(p2, 0.0) == pytest.approx(0.594875, abs=1e-6)
    with pytest.raises(BranchError):
        kernel_root_alpha(p2, 1.6)


def test_branch_point_is_reachable(p2):
    c = constants(p2)
    values = special_values(p2, 1.0 / c.b1)
    assert float(values.sqrt_delta) == pytest.approx(0.0, abs=1e-6)


def test_special_values_sqrt_delta(p2):
    values = special_values(p2, np.array([0.2, 0.7, 1.0]))
    assert_allclose(values.delta, values.sqrt_delta ** 2, rtol=1e-10)


@pytest.mark.parametrize("rates", [(0.1, 0.3, 0.5, 1.0), (0.01, 0.3, 0.5, 0.6), (0.05, 0.5, 0.5, 1.2)])
def test_kernel_polynomial_on_grid(rates):
    q = _instance(*rates)
    c = constants(q)
    y = np.linspace(0.05, 1.0 / c.b1, 25)
    x = np.linspace(-1.0, 3.0, 17)[:, None]
    values = special_values(q, y)
    direct = x_kernel(q, x, y)
    # 直接按 −λ1x² + (λ1+λ2+μ1−λ2y)x − μ1 展开
    expanded = -q.lambda1 * x ** 2 + (q.lambda1 + q.lambda2 + q.mu1 - q.lambda2 * y) * x - q.mu1
    assert_allclose(direct, expanded, atol=1e-14)
    assert_allclose(direct, values.factored_kernel(x), atol=1e-12)
    assert_allclose(x_kernel(q, values.alpha, y), 0.0, atol=1e-10)
    assert_allclose(x_kernel(q, values.x2, y), 0.0, atol=1e-10)
    assert np.all(values.alpha <= values.x2 * (1.0 + 1e-12))


@pytest.mark.parametrize("rates", [(0.1, 0.3, 0.5, 1.0), (0.01, 0.3, 0.5, 0.6)])
def test_kernel_discriminant_sign_and_branch_points(rates):
    q = _instance(*rates)
    c = constants(q)

    def disc(y):
        return (q.lambda1 + q.lambda2 + q.mu1 - q.lambda2 * y) ** 2 - 4.0 * q.lambda1 * q.mu1

    assert disc(1.0 / c.b1) == pytest.approx(0.0, abs=1e-14)
    assert disc(1.0 / c.b2) == pytest.approx(0.0, abs=1e-14)
    inside = np.linspace(0.0, 1.0 / c.b1, 50, endpoint=False)[1:]
    between = np.linspace(1.0 / c.b1, 1.0 / c.b2, 50)[1:-1]
    assert np.all(disc(inside) > 0)
    assert np.all(disc(between) < 0)
    assert np.all(disc(1.0 / c.b2 + np.array([0.1, 1.0])) > 0)
    assert_allclose(special_values(q, inside).delta, disc(inside), rtol=1e-12)
    with pytest.raises(BranchError):
        special_values(q, between[len(between) // 2])


def test_special_values_complex(p2):
    values = special_values(p2, np.array([0.5 + 0.5j, -0.3j]))
    assert np.iscomplexobj(values.iota)
    assert_allclose(values.delta, values.sqrt_delta ** 2, rtol=1e-10)


def test_u_root(p2):
    c = constants(p2)
    u = u_root(p2, c.eta1)
    s = 1 - p2.mu2 - p2.lambda2 / c.eta1
    assert p2.mu1 * u ** 2 - s * u + p2.lambda1 == pytest.approx(0.0, abs=1e-14)


def test_sigma1_needs_overloaded_high_class(p2):
    with pytest.raises(DomainError):
        sigma1(p2, constants(p2), constants(p2).eta1)


def test_pgf_values_at_one(p2):
    assert eval_pgf(p2, 'L3', 1.0) == pytest.approx(0.5)
    assert eval_pgf(p2, 'L2', 1.0) == pytest.approx(0.3)
    assert eval_pgf(p2, 'L_low', 1.0) == pytest.approx(1.0)
    assert eval_pgf(p2, 'L_total', 1.0) == pytest.approx(1.0)
    assert eval_pgf(p2, 'L1', (1.0, 1.0)) == pytest.approx(0.2)


def test_pgf_identities(p2):
    identities = pgf_identities(p2, 0.5, 0.5)
    assert identities['L1(x,1)'][0] == pytest.approx(0.1777778, abs=1e-7)
    for name, (closed, general) in identities.items():
        assert closed == pytest.approx(general, rel=1e-10), name


@pytest.mark.parametrize(
    ("which", "point"),
    [('L_total', 1.3), ('L2', 1.6), ('L1', 0.5), ('unknown', 0.5)],
)
def test_pgf_domain_errors(p2, which, point):
    with pytest.raises(DomainError):
        eval_pgf(p2, which, point)


def test_dominant_radius(p2):
    assert dominant_radius(p2, 'L3') == math.inf
    assert dominant_radius(p2, 'L2') == pytest.approx(1.509288, abs=1e-6)
    assert dominant_radius(p2, 'L_total') == pytest.approx(1.25)
    with pytest.raises(DomainError):
        pgf_evaluator(p2, 'L1')


def test_series_coefficients_of_geometric():
    series = series_coefficients(lambda y: 1.0 / (1.0 - y / 2.0), 12, 2.0)
    assert_allclose(series.coefficients, 0.5 ** np.arange(12), atol=1e-12)
    assert series.error_bound < 1e-9


def test_series_coefficients_precision_error(p2):
    with pytest.raises(PrecisionError):
        series_coefficients(pgf_evaluator(p2, 'L_total'), 400, dominant_radius(p2, 'L_total'))


@pytest.mark.parametrize(("which", "spec", "shift"), [('L2', None, 1), ('L_total', 'total', 0), ('L_low', 'low', 0)])
def test_series_match_oracle(p2, oracle, which, spec, shift):
    n = np.arange(21)
    if spec is None:
        expected = np.array([model2_prob(oracle, 0, int(k) + shift) for k in n])
    else:
        expected = marginal(oracle, spec)[n]
    series = series_coefficients(pgf_evaluator(p2, which), len(n), dominant_radius(p2, which))
    assert_allclose(series.coefficients, expected, atol=1e-6)


def test_high_marginal_estimate(p2, oracle):
    est = tail_high_marginal(p2)
    assert est.exact
    n = np.arange(11)
    assert_allclose(marginal(oracle, 'high')[n], est.value(n), rtol=1e-6)


def test_psi_coefficients_match_oracle(p2, oracle, bp):
    for j in range(4):
        coefficients = psi_coefficients(p2, bp, j, 10)
        expected = [model2_prob(oracle, i, j, Mode.BUSY) for i in range(1, 11)]
        assert_allclose(coefficients, expected, atol=1e-6, err_msg=f'j={j}')


def test_psi_zero_is_geometric(p2, bp):
    c = constants(p2)
    coefficients = psi_coefficients(p2, bp, 0, 8)
    assert_allclose(coefficients, c.c0 * float(eval_pgf(p2, 'L3', 0.0)) * c.c0 ** np.arange(8), rtol=1e-12)


@pytest.mark.parametrize("j", [0, 1, 2])
def test_psi_recursion_matches_coefficients(p2, bp, j):
    x = 0.5
    coefficients = psi_coefficients(p2, bp, j, 80)
    assert psi_recursion(p2, bp, j, x) == pytest.approx(np.polyval(coefficients[::-1], x), rel=1e-10)


def test_psi_recursion_at_removable_point(p2, bp):
    c = constants(p2)
    left = psi_recursion(p2, bp, 2, c.x1_val - 1e-6)
    middle = psi_recursion(p2, bp, 2, c.x1_val)
    assert middle == pytest.approx(left, rel=1e-5)


def test_psi_domain(p2, bp):
    c = constants(p2)
    with pytest.raises(DomainError):
        psi_recursion(p2, bp, 1, c.x2_val)
    with pytest.raises(DomainError):
        psi_recursion(p2, bp, -1, 0.1)


def test_fixed_low_ratio_is_linear(p2, bp):
    n = np.arange(15, 31)
    ratio = psi_coefficients(p2, bp, 1, 31)[n - 1] / psi_coefficients(p2, bp, 0, 31)[n - 1]
    assert linregress(n, ratio).rvalue ** 2 >= 0.99
    est = tail_joint_fixed_low(p2, 1)
    assert est.power == 1.0
    assert est.decay_rate == pytest.approx(constants(p2).c0)


def test_fixed_high_decay_fit(p2, oracle):
    est = tail_joint_fixed_high(p2, 0)
    assert est.power == -1.5
    n = np.arange(40, 81)
    values = np.array([model2_prob(oracle, 0, int(k)) for k in n])
    assert fit_decay(values, n, est.power) == pytest.approx(0.662564, rel=0.01)


def test_fixed_high_with_positive_i(p2):
    c = constants(p2)
    zero = tail_joint_fixed_high(p2, 0)
    two = tail_joint_fixed_high(p2, 2)
    assert two.constant / zero.constant == pytest.approx((1 + 2 * c.B_tilde) * p2.rho1)


def test_low_marginal_identity(p2, oracle):
    low = marginal(oracle, 'low')
    relation = tail_low_marginal(p2, p2.threshold_n)
    assert relation.applicable
    assert relation.multiplier == pytest.approx(10 / 3)
    n = np.arange(p2.threshold_n, 61)
    scaled = np.array([relation.multiplier * model2_prob(oracle, 0, int(k) + 1) for k in n])
    assert_allclose(low[n], scaled, rtol=1e-6)
    assert not tail_low_marginal(p2, p2.threshold_n - 1).applicable


def test_total_case_3b(p2, oracle):
    est = tail_total(p2)
    assert est.case == '3b'
    assert est.decay_rate == pytest.approx(0.8)
    assert est.power == 0.0
    n = np.arange(40, 81)
    assert fit_decay(marginal(oracle, 'total')[n], n) == pytest.approx(0.8, rel=0.01)
    assert marginal(oracle, 'total')[60] / est.value(60) == pytest.approx(1.0, rel=0.01)


def test_equal_rates_total_is_exact():
    q = _instance(0.1, 0.3, 1.0, 1.0, threshold_n=5)
    est = tail_total(q)
    assert est.exact
    assert est.case == 'equal-rates'
    assert est.decay_rate == pytest.approx(0.4)
    dist = solve_model2(q, TruncationCaps(30, 80))
    n = np.arange(5, 31)
    assert_allclose(marginal(dist, 'total')[n], est.value(n), rtol=1e-6)


@pytest.mark.parametrize(
    ("rates", "raw_d", "case", "gamma"),
    [
        ((0.01, 0.3, 0.5, 0.5), 0.1027, 'equal-rates', 0.62),
        ((0.01, 0.3, 0.5, 0.6), 0.0659, '1b', 0.62),
    ],
)
def test_positive_regime_instances(rates, raw_d, case, gamma):
    q = _instance(*rates)
    c = constants(q)
    # D 是速率的二次式，归一化时按总速率的平方缩放
    assert c.D * sum(rates) ** 2 == pytest.approx(raw_d, abs=1e-4)
    assert regime(q).kind == RegimeKind.D_POSITIVE
    est = tail_total(q)
    assert est.case == case
    assert est.decay_rate == pytest.approx(gamma)


def test_positive_regime_constants():
    q = _instance(0.01, 0.3, 0.5, 0.6)
    c = constants(q)
    assert c.eta1 == pytest.approx(0.52443, abs=1e-4)
    assert c.b1 == pytest.approx(0.3 / (0.3 + (math.sqrt(0.5) - 0.1) ** 2), rel=1e-12)
    est = tail_joint_fixed_high(q, 0)
    assert est.decay_rate == pytest.approx(c.eta1)
    assert est.power == 0.0


def test_positive_regime_fixed_high_matches_oracle():
    q = _instance(0.01, 0.3, 0.5, 0.6)
    est = tail_joint_fixed_high(q, 0)
    dist = solve_model2(q, TruncationCaps(20, 200))
    n = np.arange(50, 61)
    values = np.array([model2_prob(dist, 0, int(k)) for k in n])
    assert_allclose(values / est.value(n), 1.0, rtol=1e-2)


def test_tail_estimate_validation():
    with pytest.raises(DomainError):
        TailEstimate('x', 1.0, 0.0, 1.0)
    assert TailEstimate('x', 2.0, 0.0, 0.5).value(1) == pytest.approx(1.0)


def test_boundary_probs(p2, oracle, bp):
    assert bp.low_busy(1) == pytest.approx(model2_prob(oracle, 0, 1))
    assert bp.vacation(0) == pytest.approx(model2_prob(oracle, 0, 0, Mode.VACATION))
    with pytest.raises(InputError):
        bp.low_busy(0)
    with pytest.raises(InputError):
        bp.vacation(p2.threshold_n)
    with pytest.raises(InputError):
        BoundaryProbs(np.zeros(2), np.zeros(10)).low_busy(5)


def test_fit_decay():
    n = np.arange(10, 40)
    assert fit_decay(0.3 * 0.7 ** n, n) == pytest.approx(0.7, rel=1e-12)
    assert fit_decay(2.0 * n ** -1.5 * 0.6 ** n, n, power=-1.5) == pytest.approx(0.6, rel=1e-12)
    with pytest.raises(InputError):
        fit_decay([0.0, 0.0, 1.0], [1, 2, 3])


def test_tail_report_columns(p2):
    report = tail_report(p2)
    assert list(report.columns) == ['quantity', 'C', 'p', 'gamma', 'regime', 'case']
    assert (report['gamma'] < 1).all() and (report['gamma'] > 0).all()


def test_scale_invariance(base):
    scaled = dataclasses.replace(base, **{
        name: getattr(base, name) * 7.3 for name in ('lambda1', 'lambda2', 'lambda3', 'mu1', 'mu2', 'mu3')
    })
    before = tail_report(normalize_model2(base))
    after = tail_report(normalize_model2(scaled))
    assert_allclose(after['gamma'], before['gamma'], rtol=1e-12)
    assert_allclose(after['C'], before['C'], rtol=1e-10)


@pytest.mark.parametrize(
    ("rates", "kind", "vanishing"),
    [
        ((0.1, 0.3, 0.5, 1.0), RegimeKind.D_NEGATIVE, 'T_star'),
        ((0.05, 0.5, 0.5, 1.2), RegimeKind.D_NEGATIVE, 'T_star'),
        ((0.01, 0.3, 0.5, 0.6), RegimeKind.D_POSITIVE, 'T'),
        ((0.1, 0.5, 0.5, 0.9), RegimeKind.D_POSITIVE, 'T'),
        ((0.3, 0.2, 1.0, 0.8), RegimeKind.D_POSITIVE, 'T'),
    ],
)
def test_pole_cancels_in_matching_special_function(rates, kind, vanishing):
    q = _instance(*rates)
    c = constants(q)
    assert regime(q).kind == kind
    assert 1.0 / c.eta1 < 1.0 / c.b1
    values = special_values(q, 1.0 / c.eta1)
    other = 'T' if vanishing == 'T_star' else 'T_star'
    assert float(getattr(values, vanishing)) == pytest.approx(0.0, abs=1e-10)
    assert abs(float(getattr(values, other))) > 1e-6


def _tuned_mu2(lambda1, lambda2, mu1, target, bracket):
    """调 μ2 使归一化后的 D 等于 target"""
    return brentq(lambda mu2: constants(_instance(lambda1, lambda2, mu1, mu2)).D - target, *bracket, xtol=1e-15)


ZERO_REGIME = [((0.1, 0.3, 0.5), (0.6, 1.0), '2b'), ((0.05, 0.5, 0.5), (0.9, 1.3), '2a')]


@pytest.mark.parametrize(("rates", "bracket", "case"), ZERO_REGIME)
def test_zero_regime_within_tolerance(rates, bracket, case):
    q = _instance(*rates, _tuned_mu2(*rates, 1e-14, bracket))
    c = constants(q)
    assert abs(c.D) <= D_ZERO_TOL
    reg = regime(q)
    assert reg.kind == RegimeKind.D_ZERO
    assert reg.decay_rate == pytest.approx(c.b1)
    assert c.c22 > 0

    high = tail_joint_fixed_high(q, 0)
    assert (high.power, high.decay_rate, high.constant) == (-0.5, c.b1, c.c22)
    assert tail_joint_fixed_high(q, 2).constant == pytest.approx(c.c22 * q.rho1)

    total = tail_total(q)
    assert total.case == case
    assert total.regime == RegimeKind.D_ZERO.value
    if case == '2b':
        assert total.power == 0.0
        assert total.decay_rate == pytest.approx(q.rho_bar1)
    else:
        assert q.rho_bar1 >= 1.0
        assert total.power == -0.5
        assert total.decay_rate == c.b1
        kappa = float(special_values(q, 1.0 / c.b1).kappa)
        assert total.constant == pytest.approx(kappa / c.b1 * c.c22, rel=1e-12)


@pytest.mark.parametrize(
    ("target", "kind"),
    [(1e-10, RegimeKind.D_POSITIVE), (-1e-10, RegimeKind.D_NEGATIVE), (0.0, RegimeKind.D_ZERO)],
)
def test_zero_regime_tolerance_boundary(target, kind):
    rates, bracket, _ = ZERO_REGIME[0]
    q = _instance(*rates, _tuned_mu2(*rates, target, bracket))
    assert regime(q).kind == kind


def test_case_1c_double_pole():
    # μ2 = λ2μ1²/(λ(μ1 − λ)) 时 η1 = ρ̄1 = 0.5
    q = _instance(0.3, 0.2, 1.0, 0.8)
    c = constants(q)
    assert c.eta1 == pytest.approx(0.5, rel=1e-12)
    est = tail_total(q)
    assert est.case == '1c'
    assert est.power == 1.0
    assert est.constant == pytest.approx((q.mu1 - q.mu2) / q.mu1 * c.c21)


def test_total_case_1b_matches_oracle():
    q = _instance(0.01, 0.3, 0.5, 0.6)
    est = tail_total(q)
    assert est.case == '1b'
    total = marginal(solve_model2(q, TruncationCaps(15, 200)), 'total')
    n = np.arange(60, 81, 5)
    assert_allclose(total[n] / est.value(n), 1.0, rtol=1e-2)


def _ratio_trend(oracle_values, est, n):
    ratios = np.asarray(oracle_values) / est.value(np.asarray(n))
    assert np.all(np.diff(np.abs(ratios - 1.0)) < 0), ratios
    return ratios


@pytest.mark.slow
def test_fixed_high_constant_negative_regime_matches_oracle(p2):
    est = tail_joint_fixed_high(p2, 0)
    dist = solve_model2(p2, TruncationCaps(40, 700))
    n = [100, 200, 400]
    ratios = _ratio_trend([model2_prob(dist, 0, k) for k in n], est, n)
    assert np.all(np.diff(ratios) > 0)
    assert 0.85 < ratios[-1] < 1.05


@pytest.mark.slow
def test_total_case_3a_matches_oracle():
    q = _instance(0.05, 0.5, 0.5, 1.2)
    c = constants(q)
    est = tail_total(q)
    assert est.case == '3a'
    assert (est.power, est.decay_rate) == (-1.5, c.b1)
    total = marginal(solve_model2(q, TruncationCaps(30, 800)), 'total')
    n = [100, 200, 400, 600]
    ratios = _ratio_trend(total[n], est, n)
    assert np.all(np.diff(ratios) > 0)
    assert 0.75 < ratios[-1] < 1.05


@pytest.mark.slow
def test_total_case_1a_matches_oracle():
    q = _instance(0.1, 0.5, 0.5, 0.9)
    est = tail_total(q)
    assert est.case == '1a'
    total = marginal(solve_model2(q, TruncationCaps(40, 300)), 'total')
    n = np.arange(60, 101, 10)
    assert_allclose(total[n] / est.value(n), 1.0, rtol=1e-3)


@pytest.mark.slow
def test_total_case_1c_matches_oracle():
    q = _instance(0.3, 0.2, 1.0, 0.8)
    est = tail_total(q)
    total = marginal(solve_model2(q, TruncationCaps(60, 200)), 'total')
    n = [25, 50, 100]
    ratios = _ratio_trend(total[n], est, n)
    assert abs(ratios[-1] - 1.0) < 0.25


@pytest.mark.slow
def test_total_case_2b_matches_oracle():
    rates, bracket, _ = ZERO_REGIME[0]
    q = _instance(*rates, _tuned_mu2(*rates, 0.0, bracket))
    est = tail_total(q)
    assert est.case == '2b'
    total = marginal(solve_model2(q, TruncationCaps(40, 300)), 'total')
    n = np.arange(60, 81, 5)
    assert_allclose(total[n] / est.value(n), 1.0, rtol=2e-2)


@pytest.mark.slow
def test_zero_regime_2a_matches_oracle():
    rates, bracket, _ = ZERO_REGIME[1]
    q = _instance(*rates, _tuned_mu2(*rates, 0.0, bracket))
    c = constants(q)
    dist = solve_model2(q, TruncationCaps(30, 600))
    n = np.arange(200, 401, 20)
    total = marginal(dist, 'total')
    assert fit_decay(total[n], n, -0.5) == pytest.approx(c.b1, rel=0.01)
    high = tail_joint_fixed_high(q, 0)
    pi2 = np.array([model2_prob(dist, 0, int(k)) for k in n])
    assert fit_decay(pi2, n, high.power) == pytest.approx(c.b1, rel=0.01)
    ratios = _ratio_trend(total[[100, 200, 400]], tail_total(q), [100, 200, 400])
    assert 0.5 < ratios[-1] < 1.5
