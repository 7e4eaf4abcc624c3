import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvrae.errors import ConfigError, UndefinedMetricError
from rvrae.metrics import (SUMMARY_FIELDS, PortfolioSpec, build_report, expanding_factor_mean,
                           long_short_backtest, monthly_rank_ic, predictive_r2, rank_ic,
                           rank_icir, sharpe, total_r2, write_reports)

pytestmark = pytest.mark.filterwarnings("ignore:predictive R")


# ---------------------------------------------------------------------------
# R^2
# ---------------------------------------------------------------------------

def test_total_r2_examples():
    assert total_r2([[1.0, 2.0]], [[1.0, 1.0]]) == pytest.approx(0.8, abs=1e-12)
    r = np.random.default_rng(0).normal(size=(4, 5))
    assert total_r2(r, r) == 1.0
    assert total_r2(r, np.zeros_like(r)) == 0.0
    with pytest.raises(UndefinedMetricError):
        total_r2(np.zeros((2, 2)), np.ones((2, 2)))


def test_total_r2_mask_excludes_cells_from_both_sums():
    r = np.array([[1.0, 2.0, 100.0]])
    f = np.array([[1.0, 1.0, -100.0]])
    assert total_r2(r, f, [[True, True, False]]) == pytest.approx(0.8, abs=1e-12)


def test_predictive_r2_two_month_example():
    r = np.array([[1.0], [3.0]])
    betas = np.ones((2, 1, 1))
    f = np.array([[1.0], [3.0]])
    with pytest.warns(UserWarning, match="first month"):
        val = predictive_r2(r, betas, f)
    assert val == pytest.approx(1 - 4 / 9, abs=1e-12)


def test_predictive_r2_with_constant_factors_equals_total_on_scored_months():
    rng = np.random.default_rng(1)
    betas = rng.normal(size=(6, 4, 2))
    f = np.tile([0.3, 0.7], (6, 1))
    r = rng.normal(size=(6, 4))
    fitted = np.einsum("tik,tk->ti", betas, f)
    assert predictive_r2(r, betas, f) == pytest.approx(total_r2(r[1:], fitted[1:]), abs=1e-12)
    assert predictive_r2(r, np.zeros_like(betas), f) == 0.0


def test_expanding_mean():
    mu = expanding_factor_mean([[1.0], [3.0], [5.0]])
    assert np.isnan(mu[0, 0]) and mu[1, 0] == 1.0 and mu[2, 0] == 2.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_r2_invariant_to_stock_order(seed):
    rng = np.random.default_rng(seed)
    r, b, f = rng.normal(size=(5, 6)), rng.normal(size=(5, 6, 2)), rng.normal(size=(5, 2))
    perm = rng.permutation(6)
    fitted = np.einsum("tik,tk->ti", b, f)
    assert total_r2(r, fitted) == pytest.approx(total_r2(r[:, perm], fitted[:, perm]), abs=1e-12)
    assert predictive_r2(r, b, f) == pytest.approx(predictive_r2(r[:, perm], b[:, perm], f),
                                                   abs=1e-12)


# ---------------------------------------------------------------------------
# Sharpe
# ---------------------------------------------------------------------------

def test_sharpe_examples():
    assert sharpe([0.02, 0.00, 0.04]) == pytest.approx(1.0, abs=1e-12)
    assert sharpe([0.02, 0.00, 0.04], annualize=True) == pytest.approx(np.sqrt(12), abs=1e-12)
    assert sharpe([0.03, 0.01, 0.05], risk_free=[0.01] * 3) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(UndefinedMetricError):
        sharpe([0.01, 0.01, 0.01])
    with pytest.raises(UndefinedMetricError):
        sharpe([0.01])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=20), st.floats(0.01, 100))
def test_sharpe_scale_invariant_and_antisymmetric(xs, c):
    x = np.asarray(xs)
    if x.std(ddof=1) < 1e-6:
        return
    s = sharpe(x)
    assert sharpe(c * x) == pytest.approx(s, rel=1e-9, abs=1e-12)
    assert sharpe(-x) == pytest.approx(-s, rel=1e-12, abs=1e-15)


# ---------------------------------------------------------------------------
# Rank IC
# ---------------------------------------------------------------------------

def test_rank_ic_examples():
    a = np.array([0.1, 0.5, -0.2, 0.3])
    assert rank_ic(a, 2 * a + 1) == pytest.approx(1.0, abs=1e-12)
    assert rank_ic(a, -a) == pytest.approx(-1.0, abs=1e-12)
    assert rank_icir([0.1, 0.3]) == pytest.approx(1.41421356237, abs=1e-10)
    assert rank_icir([0.1, 0.3]) == pytest.approx(0.2 / np.std([0.1, 0.3], ddof=1), abs=1e-12)


def test_rank_ic_errors():
    with pytest.raises(UndefinedMetricError):
        rank_ic([1, 1, 1], [1, 2, 3])
    with pytest.raises(UndefinedMetricError):
        rank_ic([1, 2], [1, 2])
    with pytest.raises(ConfigError):
        rank_ic([1, 2, 3], [1, 2])


def test_rank_ic_with_ties_matches_scipy():
    from scipy.stats import spearmanr
    p = [1, 2, 2, 3, 5, 5, 5]
    r = [0.3, -0.1, 0.2, 0.2, 0.9, 0.0, 0.4]
    assert rank_ic(p, r) == pytest.approx(spearmanr(p, r).statistic, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-100, 100), min_size=4, max_size=15, unique=True), st.integers(0, 999))
def test_rank_ic_depends_only_on_ranks(values, seed):
    p = np.asarray(values, float)
    r = np.random.default_rng(seed).normal(size=p.size)
    assert rank_ic(np.exp(p / 50) * 3 - 1, r) == pytest.approx(rank_ic(p, r), abs=1e-12)


def test_monthly_ic_marks_undefined_months():
    pred = np.array([[1.0, 2.0, 3.0], [1.0, 1.0, 1.0]])
    real = np.array([[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]])
    ic = monthly_rank_ic(pred, real)
    assert ic[0] == pytest.approx(1.0) and np.isnan(ic[1])


# ---------------------------------------------------------------------------
# backtest
# ---------------------------------------------------------------------------

def test_perfect_ranking_earns_maximal_spread():
    rng = np.random.default_rng(3)
    real = rng.normal(size=(1, 20))
    bt = long_short_backtest(real, real, PortfolioSpec(quantile=0.1))
    s = np.sort(real[0])
    assert bt.gross[0] == pytest.approx(s[-2:].mean() - s[:2].mean(), abs=1e-15)
    shuffled = long_short_backtest(rng.permutation(real[0])[None], real)
    assert shuffled.gross[0] <= bt.gross[0]


def test_turnover_conventions():
    pred = np.array([np.arange(10.0), np.arange(10.0), -np.arange(10.0)])
    real = np.random.default_rng(4).normal(size=(3, 10))
    bt = long_short_backtest(pred, real, PortfolioSpec(quantile=0.2, cost_rate=0.003))
    np.testing.assert_array_equal(bt.turnover, [2.0, 0.0, 2.0])
    assert bt.net[1] == bt.gross[1]
    assert bt.net[2] == pytest.approx(bt.gross[2] - 0.003 * 2.0, abs=1e-15)


def test_too_few_stocks_skips_month(caplog):
    pred = np.array([np.arange(5.0), np.arange(20.0)[:5]])
    mask = np.array([[True] * 5, [True] * 5])
    bt = long_short_backtest(pred, pred, PortfolioSpec(quantile=0.1), mask)
    assert bt.months == [] and "too few" in caplog.text


def test_portfolio_spec_validation():
    for bad in (PortfolioSpec(quantile=0), PortfolioSpec(quantile=0.6), PortfolioSpec(cost_rate=-1)):
        with pytest.raises(ConfigError):
            bad.validate()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_costs_lower_sharpe_when_spread_positive(seed):
    rng = np.random.default_rng(seed)
    real = rng.normal(0.01, 0.05, size=(24, 30))
    pred = real + rng.normal(0, 0.05, size=real.shape)
    bt = long_short_backtest(pred, real)
    if bt.gross.mean() > 0 and bt.turnover.sum() > 0:
        assert sharpe(bt.net) < sharpe(bt.gross)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _report(seed=0):
    rng = np.random.default_rng(seed)
    T, N, K = 6, 20, 2
    betas, factors = rng.normal(size=(T, N, K)), rng.normal(size=(T, K))
    fitted = np.einsum("tik,tk->ti", betas, factors)
    realized = fitted + 0.1 * rng.normal(size=(T, N))
    dates = [f"2001-{m:02d}" for m in range(1, T + 1)]
    return build_report("m", dates, realized, fitted, betas, factors, realized, None)


def test_report_fields_and_files(tmp_path):
    rep = _report()
    assert -1 <= rep.rank_ic_mean <= 1
    assert rep.total_r2 > 0.9 and rep.forecast_rank_ic_mean == pytest.approx(1.0)
    rep.write(tmp_path / "s.csv", tmp_path / "m.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SUMMARY_FIELDS and len(rows) == 2
    assert float(rows[1][SUMMARY_FIELDS.index("total_r2_pct")]) == pytest.approx(100 * rep.total_r2)
    with open(tmp_path / "m.csv") as fh:
        monthly = list(csv.reader(fh))
    assert [r[0] for r in monthly[1:]] == rep.dates
    write_reports([rep, _report(1)], tmp_path / "both.csv")
    assert len((tmp_path / "both.csv").read_text().splitlines()) == 3


def test_noiseless_truth_has_unit_rank_ic():
    rng = np.random.default_rng(5)
    betas, factors = rng.normal(size=(4, 12, 2)), rng.normal(size=(4, 2))
    fitted = np.einsum("tik,tk->ti", betas, factors)
    rep = build_report("o", list("abcd"), fitted, fitted, betas, factors, fitted)
    np.testing.assert_allclose(rep.ic, 1.0, atol=1e-12)
    assert rep.total_r2 == 1.0
