"""Stock panels: CSV ingestion, synthetic ground truth, normalisation, splits, windows.

A :class:`PanelDataset` stores characteristics already lagged: the slice at
date index ``t`` holds the values observed at the *previous* month end, i.e.
what was known before the return at ``t`` was realised.  The CSV format
stores raw as-of-month characteristics; :func:`load_csv` and
:func:`write_csv` perform the shift in each direction.

CSV layout (long format, one row per stock-month)::

    date,ticker,ret,c01,...,cNN
    2000-01,AAA,0.0132,0.41,...,-1.2

``date`` is ``YYYY-MM``; ``ret`` is a decimal return; an empty field is missing.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import AlignmentError, ConfigError
from .numerics import Rng, derive_seed

_DATE = re.compile(r"^(\d{4})-(0[1-9]|1[0-2])$")


class ParseError(ValueError):
    """Malformed CSV input; the message carries the line number."""


class IntegrityError(ValueError):
    """Duplicate or inconsistent panel records."""


@dataclass(frozen=True)
class PanelDataset:
    dates: list[str]
    tickers: list[str]
    returns: np.ndarray            # [T, N], zero where missing
    return_mask: np.ndarray        # [T, N] bool, True = observed
    characteristics: np.ndarray    # [T, N, C], slot t = values as of date t-1
    char_mask: np.ndarray          # [T, N, C] bool
    char_names: list[str] = field(default_factory=list)
    next_characteristics: np.ndarray | None = None  # [N, C] as of the last date
    next_char_mask: np.ndarray | None = None

    def __post_init__(self):
        T, N = self.returns.shape
        if len(self.dates) != T or len(self.tickers) != N:
            raise AlignmentError("dates/tickers do not match the return matrix")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise AlignmentError("dates must be strictly increasing")
        if len(set(self.tickers)) != N:
            raise IntegrityError("duplicate tickers")
        if self.return_mask.shape != (T, N) or self.characteristics.shape[:2] != (T, N):
            raise AlignmentError("mask/characteristic shapes do not match returns")
        if self.char_mask.shape != self.characteristics.shape:
            raise AlignmentError("characteristic mask shape mismatch")
        if self.next_characteristics is None:
            object.__setattr__(self, "next_characteristics", np.zeros((N, self.n_chars)))
            object.__setattr__(self, "next_char_mask", np.zeros((N, self.n_chars), dtype=bool))

    @property
    def n_dates(self) -> int:
        return self.returns.shape[0]

    @property
    def n_stocks(self) -> int:
        return self.returns.shape[1]

    @property
    def n_chars(self) -> int:
        return self.characteristics.shape[2]

    def slice_dates(self, start: int, stop: int) -> "PanelDataset":
        """Dates ``[start, stop)``; the characteristic slot after ``stop`` is carried along."""
        if stop < self.n_dates:
            nxt, nmask = self.characteristics[stop], self.char_mask[stop]
        else:
            nxt, nmask = self.next_characteristics, self.next_char_mask
        return replace(self, dates=self.dates[start:stop], returns=self.returns[start:stop],
                       return_mask=self.return_mask[start:stop],
                       characteristics=self.characteristics[start:stop],
                       char_mask=self.char_mask[start:stop],
                       next_characteristics=nxt, next_char_mask=nmask)

    def select_tickers(self, tickers) -> "PanelDataset":
        pos = {t: i for i, t in enumerate(self.tickers)}
        try:
            idx = [pos[t] for t in tickers]
        except KeyError as exc:
            raise AlignmentError(f"unknown ticker {exc}") from None
        return replace(self, tickers=[self.tickers[i] for i in idx], returns=self.returns[:, idx],
                       return_mask=self.return_mask[:, idx],
                       characteristics=self.characteristics[:, idx],
                       char_mask=self.char_mask[:, idx],
                       next_characteristics=self.next_characteristics[idx],
                       next_char_mask=self.next_char_mask[idx])

    def equals(self, other: "PanelDataset") -> bool:
        arrays = ("returns", "return_mask", "characteristics", "char_mask",
                  "next_characteristics", "next_char_mask")
        return (self.dates == other.dates and self.tickers == other.tickers
                and self.char_names == other.char_names
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))


def month_range(start: str, n: int) -> list[str]:
    m = _DATE.match(start)
    if not m:
        raise ConfigError(f"start date {start!r} is not YYYY-MM")
    y, mo = int(m.group(1)), int(m.group(2)) - 1
    return [f"{y + (mo + k) // 12:04d}-{(mo + k) % 12 + 1:02d}" for k in range(n)]


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _cell(text: str, path, lineno: int, column: str) -> float:
    if text == "":
        return np.nan
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: column {column!r} is not a number: {text!r}") from None
    if not np.isfinite(v):
        raise ParseError(f"{path}:{lineno}: column {column!r} is not finite")
    return v


def load_csv(path: str | Path) -> PanelDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["date", "ticker", "ret"]:
            raise ParseError(f"{path}:1: header must start with date,ticker,ret")
        char_names = header[3:]
        width = len(header)
        records: dict[tuple[str, str], tuple[float, list[float]]] = {}
        tickers: dict[str, None] = {}
        dates: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            date, ticker = row[0], row[1]
            if not _DATE.match(date):
                raise ParseError(f"{path}:{lineno}: date {date!r} is not YYYY-MM")
            if not ticker:
                raise ParseError(f"{path}:{lineno}: empty ticker")
            if (date, ticker) in records:
                raise IntegrityError(f"{path}:{lineno}: duplicate record for ({date}, {ticker})")
            ret = _cell(row[2], path, lineno, "ret")
            chars = [_cell(v, path, lineno, name) for v, name in zip(row[3:], char_names)]
            records[(date, ticker)] = (ret, chars)
            tickers.setdefault(ticker)
            dates.add(date)

    dates_sorted = sorted(dates)
    tick = list(tickers)
    T, N, C = len(dates_sorted), len(tick), len(char_names)
    ret = np.full((T, N), np.nan)
    raw = np.full((T, N, C), np.nan)
    di = {d: i for i, d in enumerate(dates_sorted)}
    ti = {t: i for i, t in enumerate(tick)}
    for (d, t), (r, ch) in records.items():
        ret[di[d], ti[t]] = r
        raw[di[d], ti[t]] = ch
    return _panel_from_raw(dates_sorted, tick, ret, raw, char_names)


def _panel_from_raw(dates, tickers, ret, raw, char_names) -> PanelDataset:
    """Build a panel from as-of-date characteristics, applying the one-month lag."""
    T, N, C = raw.shape
    lagged = np.full_like(raw, np.nan)
    lagged[1:] = raw[:-1]
    rmask = ~np.isnan(ret)
    cmask = ~np.isnan(lagged)
    nxt = raw[-1] if T else np.full((N, C), np.nan)
    return PanelDataset(dates=list(dates), tickers=list(tickers), returns=np.where(rmask, ret, 0.0),
                        return_mask=rmask, characteristics=np.where(cmask, lagged, 0.0),
                        char_mask=cmask, char_names=list(char_names),
                        next_characteristics=np.where(np.isnan(nxt), 0.0, nxt),
                        next_char_mask=~np.isnan(nxt))


def _num(v: float) -> str:
    return repr(float(v))


def write_csv(panel: PanelDataset, path: str | Path) -> None:
    """Inverse of :func:`load_csv` (un-lags characteristics); full float precision."""
    names = panel.char_names or [f"c{j + 1:02d}" for j in range(panel.n_chars)]
    raw = np.concatenate([panel.characteristics[1:], panel.next_characteristics[None]], axis=0)
    raw_mask = np.concatenate([panel.char_mask[1:], panel.next_char_mask[None]], axis=0)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "ticker", "ret", *names])
        for t, d in enumerate(panel.dates):
            for i, tk in enumerate(panel.tickers):
                has_ret = panel.return_mask[t, i]
                if not has_ret and not raw_mask[t, i].any():
                    continue
                chars = [_num(v) if m else "" for v, m in zip(raw[t, i], raw_mask[t, i])]
                w.writerow([d, tk, _num(panel.returns[t, i]) if has_ret else "", *chars])


# ---------------------------------------------------------------------------
# synthetic ground truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    n_stocks: int = 50
    n_factors: int = 3
    n_chars: int = 10
    n_dates: int = 240
    seed: int = 0
    sigma_f: float = 1.0
    sigma_u: float = 0.1
    rho: float = 0.9
    level_sd: float = 2.0                # sd of each stock's persistent characteristic level
    beta_scale: float = 1.0              # sd of each exposure
    w_true: np.ndarray | None = None     # [K_true, C]; drawn when None
    beta_mean: np.ndarray | None = None  # [K_true]; zero when None
    start: str = "2000-01"

    def validate(self) -> None:
        for key in ("n_stocks", "n_factors", "n_chars", "n_dates"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if not self.sigma_f > 0:
            raise ConfigError("sigma_f must be > 0")
        if not self.sigma_u >= 0:
            raise ConfigError("sigma_u must be >= 0")
        if not 0 <= self.rho < 1:
            raise ConfigError("rho must lie in [0, 1)")
        if not self.level_sd >= 0:
            raise ConfigError("level_sd must be >= 0")
        if self.w_true is not None and np.shape(self.w_true) != (self.n_factors, self.n_chars):
            raise ConfigError(f"w_true must have shape ({self.n_factors}, {self.n_chars})")
        if self.beta_mean is not None and np.shape(self.beta_mean) != (self.n_factors,):
            raise ConfigError(f"beta_mean must have shape ({self.n_factors},)")


@dataclass(frozen=True)
class GroundTruth:
    factors: np.ndarray   # [T, K_true]
    betas: np.ndarray     # [T, N, K_true]
    noise: np.ndarray     # [T, N]

    def fitted(self) -> np.ndarray:
        return np.einsum("tik,tk->ti", self.betas, self.factors)


def generate_synthetic(spec: SyntheticSpec) -> tuple[PanelDataset, GroundTruth]:
    """Panel from ``r_t = beta(x_{t-1}) f_t + u_t`` with AR(1) characteristics.

    Each characteristic reverts with persistence ``rho`` (unit innovation
    variance at stationarity) around a stock-specific level drawn with sd
    ``level_sd``; ``beta = beta_mean + W x`` with ``W`` scaled so each exposure
    has sd ``beta_scale``.
    The pre-sample characteristic slot (date index 0) is reported missing
    because no earlier CSV row could carry it.
    """
    spec.validate()
    N, K, C, T = spec.n_stocks, spec.n_factors, spec.n_chars, spec.n_dates
    rng = Rng(spec.seed)
    w = (np.asarray(spec.w_true, dtype=float) if spec.w_true is not None
         else rng.child("w_true").normal((K, C)) * spec.beta_scale
         / np.sqrt(C * (1.0 + spec.level_sd ** 2)))
    b0 = np.zeros(K) if spec.beta_mean is None else np.asarray(spec.beta_mean, dtype=float)

    level = spec.level_sd * rng.child("levels").normal((N, C))
    shocks = rng.child("characteristics").normal((T + 1, N, C))
    x = np.empty((T + 1, N, C))  # x[0] is the pre-sample state x_{-1}
    x[0] = level + shocks[0]
    innov = np.sqrt(1.0 - spec.rho ** 2)
    for t in range(1, T + 1):
        x[t] = level + spec.rho * (x[t - 1] - level) + innov * shocks[t]

    betas = b0 + np.einsum("tic,kc->tik", x[:T], w)
    factors = spec.sigma_f * rng.child("factors").normal((T, K))
    noise = spec.sigma_u * rng.child("noise").normal((T, N)) if spec.sigma_u > 0 else np.zeros((T, N))
    returns = np.einsum("tik,tk->ti", betas, factors) + noise

    cmask = np.ones((T, N, C), dtype=bool)
    cmask[0] = False
    chars = np.where(cmask, x[:T], 0.0)
    panel = PanelDataset(
        dates=month_range(spec.start, T), tickers=[f"S{i:04d}" for i in range(N)],
        returns=returns, return_mask=np.ones((T, N), dtype=bool),
        characteristics=chars, char_mask=cmask, char_names=[f"c{j + 1:02d}" for j in range(C)],
        next_characteristics=x[T].copy(), next_char_mask=np.ones((N, C), dtype=bool))
    return panel, GroundTruth(factors, betas, noise)


def write_ground_truth(prefix: str | Path, panel: PanelDataset, truth: GroundTruth) -> None:
    """``<prefix>_factors.csv`` (date,f1..fK) and ``<prefix>_betas.csv`` (date,ticker,b1..bK)."""
    prefix = str(prefix)
    K = truth.factors.shape[1]
    with open(f"{prefix}_factors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *[f"f{k + 1}" for k in range(K)]])
        for d, f in zip(panel.dates, truth.factors):
            w.writerow([d, *map(_num, f)])
    with open(f"{prefix}_betas.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "ticker", *[f"b{k + 1}" for k in range(K)]])
        for t, d in enumerate(panel.dates):
            for i, tk in enumerate(panel.tickers):
                w.writerow([d, tk, *map(_num, truth.betas[t, i])])


def load_ground_truth(prefix: str | Path, panel: PanelDataset) -> GroundTruth:
    prefix = str(prefix)
    di = {d: i for i, d in enumerate(panel.dates)}
    ti = {t: i for i, t in enumerate(panel.tickers)}
    with open(f"{prefix}_factors.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    K = len(rows[0]) - 1
    factors = np.zeros((panel.n_dates, K))
    for row in rows[1:]:
        if row[0] in di:
            factors[di[row[0]]] = [float(v) for v in row[1:]]
    betas = np.zeros((panel.n_dates, panel.n_stocks, K))
    with open(f"{prefix}_betas.csv", newline="") as fh:
        for row in list(csv.reader(fh))[1:]:
            if row[0] in di and row[1] in ti:
                betas[di[row[0]], ti[row[1]]] = [float(v) for v in row[2:]]
    return GroundTruth(factors, betas, np.zeros((panel.n_dates, panel.n_stocks)))


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def _rank_to_unit(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    for c in range(values.shape[1]):
        obs = mask[:, c]
        n = int(obs.sum())
        if n > 1:
            r = rankdata(values[obs, c], method="average") - 1.0
            out[obs, c] = 2.0 * r / (n - 1) - 1.0
    return out


def normalize_characteristics(panel: PanelDataset) -> PanelDataset:
    """Per-date cross-sectional rank map of each characteristic onto ``[-1, 1]``.

    Ties share their average rank; missing entries are set to 0, the
    cross-sectional median.  Masks are kept.
    """
    chars = np.stack([_rank_to_unit(panel.characteristics[t], panel.char_mask[t])
                      for t in range(panel.n_dates)]) if panel.n_dates else panel.characteristics
    nxt = _rank_to_unit(panel.next_characteristics, panel.next_char_mask)
    return replace(panel, characteristics=chars, next_characteristics=nxt)


# ---------------------------------------------------------------------------
# splitting and stock omission
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test cut.

    Either relative weights (default 15/3/3, i.e. years) or explicit inclusive
    ``YYYY-MM`` ranges ``((start, end), (start, end), (start, end))``.
    """

    train: float = 15.0
    validation: float = 3.0
    test: float = 3.0
    ranges: tuple[tuple[str, str], ...] | None = None

    def bounds(self, dates: list[str]) -> list[tuple[int, int]]:
        if self.ranges is not None:
            return self._range_bounds(dates)
        weights = (self.train, self.validation, self.test)
        if any(w <= 0 for w in weights):
            raise ConfigError(f"split weights must all be positive, got {weights}")
        T = len(dates)
        total = sum(weights)
        n_train = int(round(T * self.train / total))
        n_val = int(round(T * self.validation / total))
        if n_train < 1 or n_val < 1 or T - n_train - n_val < 1:
            raise ConfigError(f"{T} dates cannot be split {weights}")
        return [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, T)]

    def _range_bounds(self, dates):
        if len(self.ranges) != 3:
            raise ConfigError("split ranges must give train, validation and test")
        for lo, hi in self.ranges:
            if not (_DATE.match(lo) and _DATE.match(hi)) or lo > hi:
                raise ConfigError(f"invalid range {lo}..{hi}")
        for (_, hi), (lo, _) in zip(self.ranges, self.ranges[1:]):
            if lo <= hi:
                raise ConfigError("split ranges overlap or are out of order")
        out = []
        for lo, hi in self.ranges:
            idx = [i for i, d in enumerate(dates) if lo <= d <= hi]
            if not idx:
                raise ConfigError(f"range {lo}..{hi} contains no dates")
            out.append((idx[0], idx[-1] + 1))
        return out


def split(panel: PanelDataset, spec: SplitSpec) -> tuple[PanelDataset, PanelDataset, PanelDataset]:
    return tuple(panel.slice_dates(a, b) for a, b in spec.bounds(panel.dates))


def omit_stocks(panel: PanelDataset, m: int, seed: int) -> tuple[PanelDataset, list[str]]:
    """Drop ``m`` randomly chosen stocks; returns the reduced panel and the omitted tickers."""
    if not 0 <= m < panel.n_stocks:
        raise ConfigError(f"omit count m={m} must satisfy 0 <= m < N={panel.n_stocks}")
    order = Rng(derive_seed(seed, "omit-stocks")).permutation(panel.n_stocks)
    gone = set(order[:m].tolist())
    omitted = [t for i, t in enumerate(panel.tickers) if i in gone]
    kept = [t for i, t in enumerate(panel.tickers) if i not in gone]
    return panel.select_tickers(kept), omitted


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Window:
    """``T`` consecutive months of one panel; slot ``s`` characteristics precede slot ``s`` returns."""

    returns: np.ndarray          # [T, N]
    mask: np.ndarray             # [T, N]
    characteristics: np.ndarray  # [T, N, C]
    end: int                     # panel index of the last slot

    @property
    def length(self) -> int:
        return self.returns.shape[0]


def window_at(panel: PanelDataset, end: int, length: int) -> Window:
    start = end - length + 1
    if start < 0 or end >= panel.n_dates:
        raise AlignmentError(f"window of length {length} ending at {end} does not fit "
                             f"{panel.n_dates} dates")
    sl = slice(start, end + 1)
    return Window(panel.returns[sl], panel.return_mask[sl], panel.characteristics[sl], end)


def build_windows(panel: PanelDataset, length: int) -> list[Window]:
    """Rolling windows with stride 1 lying entirely inside ``panel``."""
    if length < 1:
        raise ConfigError("window length must be >= 1")
    return [window_at(panel, e, length) for e in range(length - 1, panel.n_dates)]


def forecast_characteristics(panel: PanelDataset, end: int, length: int) -> np.ndarray:
    """Characteristic slots ``end-length+2 .. end+1``: the history ending at the month after ``end``."""
    nxt = panel.characteristics[end + 1] if end + 1 < panel.n_dates else panel.next_characteristics
    start = end - length + 2
    if start < 0:
        raise AlignmentError(f"not enough history before index {end} for length {length}")
    return np.concatenate([panel.characteristics[start:end + 1], nxt[None]], axis=0)
