"""End-to-end evaluation: score a period with the model or a reference predictor."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import GroundTruth, PanelDataset, SplitSpec, forecast_characteristics, omit_stocks
from .errors import AlignmentError, ConfigError
from .metrics import EvalReport, PortfolioSpec, build_report, rank_icir
from .model import ModelDims, RvraeModel, TrainConfig, fit_last, predict, train


@dataclass
class PeriodOutputs:
    dates: list[str]
    realized: np.ndarray    # [T, M]
    mask: np.ndarray        # [T, M]
    fitted: np.ndarray      # [T, M] contemporaneous beta_t . f_t
    betas: np.ndarray       # [T, M, K]
    factors: np.ndarray     # [T, K]
    forecasts: np.ndarray   # [T, M] made with data up to the previous month

    def report(self, name: str, spec: PortfolioSpec | None = None, ic_columns=None) -> EvalReport:
        return build_report(name, self.dates, self.realized, self.fitted, self.betas, self.factors,
                            self.forecasts, self.mask, spec, ic_columns)


def _columns(panel: PanelDataset, tickers) -> np.ndarray:
    pos = {t: i for i, t in enumerate(panel.tickers)}
    try:
        return np.array([pos[t] for t in tickers], dtype=int)
    except KeyError as exc:
        raise AlignmentError(f"ticker {exc} not in panel") from None


def model_outputs(model: RvraeModel, panel: PanelDataset, start: int, stop: int,
                  universe=None, stocks=None) -> PeriodOutputs:
    """Fit and forecast months ``[start, stop)`` of ``panel``.

    ``universe`` lists the tickers whose returns feed the factor network (the
    training cross-section, default: all of ``panel``); ``stocks`` lists the
    tickers to score (default: the universe).  History before ``start`` is
    used for windows, never data after the scored month.
    """
    T = model.dims.window
    if start < T:
        raise AlignmentError(f"scoring from index {start} needs {T} months of history")
    if stop <= start:
        raise ConfigError("empty evaluation period")
    uni = _columns(panel, panel.tickers if universe is None else universe)
    cols = uni if stocks is None else _columns(panel, stocks)
    if len(uni) != model.dims.n_assets:
        raise AlignmentError(f"universe of {len(uni)} stocks does not match model N={model.dims.n_assets}")

    n, M, K = stop - start, len(cols), model.dims.n_factors
    fitted = np.zeros((n, M))
    betas = np.zeros((n, M, K))
    factors = np.zeros((n, K))
    forecasts = np.zeros((n, M))
    for j, t in enumerate(range(start, stop)):
        r_win = panel.returns[t - T + 1:t + 1][:, uni]
        x_win = panel.characteristics[t - T + 1:t + 1][:, cols]
        fit = fit_last(model, r_win, x_win)
        fitted[j], betas[j], factors[j] = fit.fitted, fit.betas, fit.factors
        prev = panel.returns[t - T:t][:, uni]
        x_next = forecast_characteristics(panel, t - 1, T)[:, cols]
        forecasts[j] = predict(model, prev, x_next).expected_returns
    sl = slice(start, stop)
    return PeriodOutputs(panel.dates[sl], panel.returns[sl][:, cols], panel.return_mask[sl][:, cols],
                         fitted, betas, factors, forecasts)


def oracle_outputs(truth: GroundTruth, panel: PanelDataset, start: int, stop: int) -> PeriodOutputs:
    """Ground-truth exposures and factors; forecasts use the prevailing mean of past true factors."""
    if start < 1:
        raise AlignmentError("oracle forecasts need at least one earlier month")
    sl = slice(start, stop)
    csum = np.cumsum(truth.factors, axis=0)
    prevailing = csum[start - 1:stop - 1] / np.arange(start, stop)[:, None]
    b = truth.betas[sl]
    return PeriodOutputs(panel.dates[sl], panel.returns[sl], panel.return_mask[sl],
                         np.einsum("tik,tk->ti", b, truth.factors[sl]), b, truth.factors[sl],
                         np.einsum("tik,tk->ti", b, prevailing))


def zero_outputs(panel: PanelDataset, start: int, stop: int, n_factors: int = 1) -> PeriodOutputs:
    sl = slice(start, stop)
    shape = panel.returns[sl].shape
    return PeriodOutputs(panel.dates[sl], panel.returns[sl], panel.return_mask[sl], np.zeros(shape),
                         np.zeros(shape + (n_factors,)), np.zeros((shape[0], n_factors)),
                         np.zeros(shape))


def split_bounds(panel: PanelDataset, spec: SplitSpec) -> list[tuple[int, int]]:
    return spec.bounds(panel.dates)


def validation_panel(panel: PanelDataset, bounds: tuple[int, int], window: int) -> PanelDataset:
    """Validation months plus the ``window - 1`` months before them.

    Every validation window then ends inside the validation period while its
    history may reach back into training months, as at test time.
    """
    start, stop = bounds
    return panel.slice_dates(max(0, start - window + 1), stop)


def train_on_panel(panel: PanelDataset, split_spec: SplitSpec, dims: ModelDims,
                   config: TrainConfig):
    """Split, initialise from ``config.seed`` and train; returns (model, history, test bounds)."""
    (a, b), val_bounds, _ = split_bounds(panel, split_spec)
    tr, va = panel.slice_dates(a, b), validation_panel(panel, val_bounds, config.window)
    dims = replace(dims, n_assets=panel.n_stocks, n_chars=panel.n_chars, window=config.window)
    model = RvraeModel.initialize(dims, config.seed)
    trained, history = train(model, tr, va, config)
    return trained, history, split_bounds(panel, split_spec)[2]


@dataclass
class OmissionRow:
    m: int
    seed: int
    omitted: list[str]
    rank_ic: float
    rank_icir: float
    n_scored: int


def omission_run(panel: PanelDataset, split_spec: SplitSpec, dims: ModelDims, config: TrainConfig,
                 m: int, seed: int) -> OmissionRow:
    """Train without ``m`` random stocks, then score only those stocks on the test period."""
    (a, b), val_bounds, (e, f) = split_bounds(panel, split_spec)
    kept_panel, omitted = omit_stocks(panel.slice_dates(a, b), m, seed)
    kept = kept_panel.tickers
    val = validation_panel(panel, val_bounds, config.window).select_tickers(kept)
    cfg = replace(config, seed=seed)
    dims = replace(dims, n_assets=len(kept), n_chars=panel.n_chars, window=cfg.window)
    model, _ = train(RvraeModel.initialize(dims, cfg.seed), kept_panel, val, cfg)
    out = model_outputs(model, panel, max(e, dims.window), f, universe=kept, stocks=omitted)
    rep = out.report(f"omit{m}-seed{seed}")
    return OmissionRow(m, seed, omitted, rep.rank_ic_mean, rep.rank_icir, len(omitted))


def summarize_omission(rows: list[OmissionRow]) -> dict[str, float]:
    ic = np.array([r.rank_ic for r in rows])
    icir = np.array([r.rank_icir for r in rows])
    sd = (lambda x: float(np.nanstd(x, ddof=1)) if np.isfinite(x).sum() > 1 else float("nan"))
    return {"rank_ic_mean": float(np.nanmean(ic)), "rank_ic_sd": sd(ic),
            "rank_icir_mean": float(np.nanmean(icir)), "rank_icir_sd": sd(icir)}


__all__ = ["PeriodOutputs", "model_outputs", "oracle_outputs", "zero_outputs", "train_on_panel",
           "validation_panel", "split_bounds",
           "omission_run", "summarize_omission", "OmissionRow", "rank_icir"]
