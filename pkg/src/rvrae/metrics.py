"""Evaluation metrics: total/predictive R^2, long-short backtest, Sharpe, Rank IC/ICIR.

All functions take plain numpy arrays laid out ``[month, stock]`` with an
optional boolean mask of observed cells.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, UndefinedMetricError

logger = logging.getLogger(__name__)


def _mask(shape, mask) -> np.ndarray:
    return np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)


def total_r2(realized, fitted, mask=None) -> float:
    """``1 - sum (r - fitted)^2 / sum r^2`` over observed cells (no demeaning)."""
    r = np.asarray(realized, dtype=float)
    f = np.asarray(fitted, dtype=float)
    if r.shape != f.shape:
        raise ConfigError(f"realized {r.shape} and fitted {f.shape} differ")
    m = _mask(r.shape, mask)
    sst = np.sum(r[m] ** 2)
    if sst == 0:
        raise UndefinedMetricError("sum of squared returns is zero")
    return float(1.0 - np.sum((r[m] - f[m]) ** 2) / sst)


def expanding_factor_mean(factors) -> np.ndarray:
    """Row ``t`` is the mean of factor rows ``0..t-1``; row 0 is NaN."""
    f = np.asarray(factors, dtype=float)
    out = np.full_like(f, np.nan)
    csum = np.cumsum(f, axis=0)
    out[1:] = csum[:-1] / np.arange(1, len(f))[:, None]
    return out


def predictive_r2(realized, betas, factors, mask=None) -> float:
    """R^2 with each month's factors replaced by the average of earlier months' factors.

    ``betas`` is ``[T, N, K]`` and ``factors`` ``[T, K]``.  The first month has
    no history and is skipped (with a warning).
    """
    r = np.asarray(realized, dtype=float)
    b = np.asarray(betas, dtype=float)
    if len(r) < 2:
        raise UndefinedMetricError("predictive R^2 needs at least two months")
    warnings.warn("predictive R^2 skips the first month (no factor history)", stacklevel=2)
    mu = expanding_factor_mean(factors)
    pred = np.einsum("tik,tk->ti", b[1:], mu[1:])
    m = _mask(r.shape, mask)[1:]
    return total_r2(r[1:], pred, m)


# ---------------------------------------------------------------------------
# portfolios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PortfolioSpec:
    quantile: float = 0.1
    cost_rate: float = 0.003          # one-way, per unit of turnover (30 bps)
    risk_free: np.ndarray | None = None  # monthly rate per backtest month; zero when None

    def validate(self) -> None:
        if not 0 < self.quantile <= 0.5:
            raise ConfigError("quantile must lie in (0, 0.5]")
        if self.cost_rate < 0:
            raise ConfigError("cost_rate must be >= 0")


@dataclass
class BacktestResult:
    months: list[int]          # row indices that produced a portfolio
    gross: np.ndarray
    net: np.ndarray
    turnover: np.ndarray


def long_short_backtest(predictions, realized, spec: PortfolioSpec | None = None,
                        mask=None) -> BacktestResult:
    """Equal-weight long top / short bottom quantile by prediction, monthly rebalanced.

    ``turnover_t = 0.5 * sum_i |w_t - w_{t-1}|`` with the first month counted
    as a full 2.0 (both legs established); ``net = gross - cost_rate * turnover``.
    Months with fewer than one stock per leg are skipped with a warning.
    """
    spec = spec or PortfolioSpec()
    spec.validate()
    pred = np.asarray(predictions, dtype=float)
    real = np.asarray(realized, dtype=float)
    m = _mask(pred.shape, mask)
    months, gross, turnover = [], [], []
    prev_w: dict[int, float] | None = None
    for t in range(pred.shape[0]):
        idx = np.flatnonzero(m[t])
        n_leg = int(np.floor(spec.quantile * len(idx) + 1e-9))
        if n_leg < 1:
            logger.warning("month %d: %d stocks is too few for a %.2f-quantile portfolio",
                           t, len(idx), spec.quantile)
            continue
        order = idx[np.argsort(pred[t, idx], kind="stable")]
        short, long = order[:n_leg], order[-n_leg:]
        w = {int(i): 1.0 / n_leg for i in long}
        for i in short:
            w[int(i)] = w.get(int(i), 0.0) - 1.0 / n_leg
        gross.append(real[t, long].mean() - real[t, short].mean())
        if prev_w is None:
            turnover.append(2.0)
        else:
            keys = set(w) | set(prev_w)
            turnover.append(0.5 * sum(abs(w.get(k, 0.0) - prev_w.get(k, 0.0)) for k in keys))
        prev_w = w
        months.append(t)
    gross_a = np.array(gross)
    turn_a = np.array(turnover)
    return BacktestResult(months, gross_a, gross_a - spec.cost_rate * turn_a, turn_a)


def sharpe(series, risk_free=None, annualize: bool = False) -> float:
    """Mean excess return over its sample (n-1) standard deviation; x sqrt(12) if annualized."""
    x = np.asarray(series, dtype=float)
    if risk_free is not None:
        x = x - np.asarray(risk_free, dtype=float)
    if x.size < 2:
        raise UndefinedMetricError("Sharpe ratio needs at least two observations")
    sd = x.std(ddof=1)
    if sd == 0 or not np.isfinite(sd):
        raise UndefinedMetricError("zero standard deviation")
    s = x.mean() / sd
    return float(s * np.sqrt(12.0)) if annualize else float(s)


# ---------------------------------------------------------------------------
# rank information coefficient
# ---------------------------------------------------------------------------

def rank_ic(predicted, realized) -> float:
    """Spearman correlation with average ranks for ties."""
    p = np.asarray(predicted, dtype=float)
    r = np.asarray(realized, dtype=float)
    if p.shape != r.shape or p.ndim != 1:
        raise ConfigError("rank_ic takes two equal-length vectors")
    if p.size < 3:
        raise UndefinedMetricError("rank IC needs at least 3 stocks")
    rp, rr = rankdata(p), rankdata(r)
    rp -= rp.mean()
    rr -= rr.mean()
    denom = np.sqrt(np.dot(rp, rp) * np.dot(rr, rr))
    if denom == 0:
        raise UndefinedMetricError("all-tied input")
    return float(np.clip(np.dot(rp, rr) / denom, -1.0, 1.0))


def rank_icir(ics) -> float:
    ics = np.asarray(ics, dtype=float)
    ics = ics[np.isfinite(ics)]
    if ics.size < 2:
        raise UndefinedMetricError("ICIR needs at least two monthly ICs")
    sd = ics.std(ddof=1)
    if sd == 0:
        raise UndefinedMetricError("ICs have zero dispersion")
    return float(ics.mean() / sd)


def monthly_rank_ic(predictions, realized, mask=None) -> np.ndarray:
    """One IC per month; NaN where undefined (too few stocks or all ties)."""
    pred = np.asarray(predictions, dtype=float)
    real = np.asarray(realized, dtype=float)
    m = _mask(pred.shape, mask)
    out = np.full(pred.shape[0], np.nan)
    for t in range(pred.shape[0]):
        try:
            out[t] = rank_ic(pred[t, m[t]], real[t, m[t]])
        except UndefinedMetricError:
            pass
    return out


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

SUMMARY_FIELDS = ("model", "total_r2", "total_r2_pct", "pred_r2", "pred_r2_pct", "sharpe_gross",
                  "sharpe_net", "sharpe_gross_annual", "sharpe_net_annual", "rank_ic_mean",
                  "rank_icir", "forecast_rank_ic_mean", "forecast_rank_icir", "months")


@dataclass
class EvalReport:
    model: str
    total_r2: float
    pred_r2: float
    sharpe_gross: float
    sharpe_net: float
    sharpe_gross_annual: float
    sharpe_net_annual: float
    rank_ic_mean: float
    rank_icir: float
    forecast_rank_ic_mean: float
    forecast_rank_icir: float
    dates: list[str] = field(default_factory=list)
    spread_gross: np.ndarray = field(default_factory=lambda: np.zeros(0))
    spread_net: np.ndarray = field(default_factory=lambda: np.zeros(0))
    turnover: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ic: np.ndarray = field(default_factory=lambda: np.zeros(0))
    forecast_ic: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def summary(self) -> dict[str, object]:
        row = {k: getattr(self, k) for k in SUMMARY_FIELDS if hasattr(self, k)}
        row["total_r2_pct"] = 100.0 * self.total_r2
        row["pred_r2_pct"] = 100.0 * self.pred_r2
        row["months"] = len(self.dates)
        return row

    def write(self, summary_path, monthly_path) -> None:
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_FIELDS)
            row = self.summary()
            w.writerow([_fmt(row[k]) for k in SUMMARY_FIELDS])
        with open(monthly_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "spread_gross", "spread_net", "turnover", "rank_ic", "forecast_rank_ic"])
            for i, d in enumerate(self.dates):
                w.writerow([d, *(_fmt(a[i]) for a in (self.spread_gross, self.spread_net,
                                                       self.turnover, self.ic, self.forecast_ic))])


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if not np.isfinite(v) else repr(v)


def _safe(fn, *args, **kw) -> float:
    try:
        return fn(*args, **kw)
    except UndefinedMetricError:
        return float("nan")


def build_report(name: str, dates: list[str], realized, fitted, betas, factors, forecasts,
                 mask=None, spec: PortfolioSpec | None = None,
                 ic_columns=None) -> EvalReport:
    """Assemble every metric for one evaluation period.

    ``fitted``/``betas``/``factors`` are the contemporaneous fit of each month;
    ``forecasts`` are predictions made one month earlier.  R^2 and the Rank IC
    use the fitted cross-section; the portfolio sorts on forecasts.
    ``ic_columns`` restricts IC (both kinds) to a subset of stock columns.
    """
    spec = spec or PortfolioSpec()
    r = np.asarray(realized, dtype=float)
    m = _mask(r.shape, mask)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pr2 = _safe(predictive_r2, r, betas, factors, m)
    cols = slice(None) if ic_columns is None else np.asarray(ic_columns)
    ic = monthly_rank_ic(np.asarray(fitted)[:, cols], r[:, cols], m[:, cols])
    fic = monthly_rank_ic(np.asarray(forecasts)[:, cols], r[:, cols], m[:, cols])
    bt = long_short_backtest(forecasts, r, spec, m)
    rf = None if spec.risk_free is None else np.asarray(spec.risk_free)[bt.months]
    gross = np.full(len(dates), np.nan)
    net = np.full(len(dates), np.nan)
    turn = np.full(len(dates), np.nan)
    gross[bt.months], net[bt.months], turn[bt.months] = bt.gross, bt.net, bt.turnover
    return EvalReport(
        model=name,
        total_r2=_safe(total_r2, r, fitted, m),
        pred_r2=pr2,
        sharpe_gross=_safe(sharpe, bt.gross, rf),
        sharpe_net=_safe(sharpe, bt.net, rf),
        sharpe_gross_annual=_safe(sharpe, bt.gross, rf, annualize=True),
        sharpe_net_annual=_safe(sharpe, bt.net, rf, annualize=True),
        rank_ic_mean=float(np.nanmean(ic)) if np.isfinite(ic).any() else float("nan"),
        rank_icir=_safe(rank_icir, ic),
        forecast_rank_ic_mean=float(np.nanmean(fic)) if np.isfinite(fic).any() else float("nan"),
        forecast_rank_icir=_safe(rank_icir, fic),
        dates=list(dates), spread_gross=gross, spread_net=net, turnover=turn, ic=ic, forecast_ic=fic,
    )


def write_reports(reports: list[EvalReport], path: str | Path) -> None:
    """Several summary rows in one CSV (same schema as :meth:`EvalReport.write`)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for rep in reports:
            row = rep.summary()
            w.writerow([_fmt(row[k]) for k in SUMMARY_FIELDS])
