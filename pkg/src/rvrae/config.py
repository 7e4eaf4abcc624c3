"""Flat ``key = value`` run configuration shared by every command.

One file holds training, synthetic-data, split, portfolio and path settings.
Lines starting with ``#`` are comments.  Command-line ``--key value`` flags
override file values.  Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .data import SplitSpec, SyntheticSpec
from .errors import ConfigError
from .metrics import PortfolioSpec
from .model import ModelDims, TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # training
    lambda_kl: float = 0.1
    mc_samples: int = 1
    learning_rate: float = 1e-3
    epochs: int = 200
    patience: int = 10
    seed: int = 0
    window: int = 12
    # model size
    factors: int = 3
    hidden: int = 16
    beta_hidden: int = 0            # 0 = same as factors (no projection)
    # synthetic panel
    n_stocks: int = 50
    n_factors: int = 3              # true factors in the generated panel
    n_chars: int = 10
    n_dates: int = 240
    sigma_f: float = 1.0
    sigma_u: float = 0.1
    rho: float = 0.9
    level_sd: float = 2.0
    beta_scale: float = 1.0
    start: str = "2000-01"
    # split
    train: float = 15.0
    validation: float = 3.0
    test: float = 3.0
    split_ranges: str = ""          # "YYYY-MM:YYYY-MM,YYYY-MM:YYYY-MM,YYYY-MM:YYYY-MM"
    # portfolio
    quantile: float = 0.1
    cost_rate: float = 0.003
    # evaluation
    predictor: str = "model"        # model | oracle | zero
    omit_m: str = ""                # comma-separated omission counts
    seeds: int = 10
    normalize: bool = True
    # prediction
    as_of: str = ""                 # forecast the month after this date; default: last date
    predict_draws: int = 64         # prior samples for the forecast spread
    # gradient check
    check_stocks: int = 8
    check_factors: int = 2
    check_hidden: int = 4
    check_chars: int = 6
    check_window: int = 4
    check_tol: float = 1e-4
    corrupt_op: str = ""            # negative control: scale this op's backward rule
    # paths
    data: str = "run/panel.csv"
    truth: str = ""                 # ground-truth prefix; default: data path without .csv
    checkpoint: str = "run/model.ckpt"
    out_dir: str = "run"
    resume: str = ""

    def validate(self) -> None:
        self.train_config().validate()
        self.synthetic_spec().validate()
        self.portfolio_spec().validate()
        if self.predictor not in ("model", "oracle", "zero"):
            raise ConfigError(f"predictor: unknown value {self.predictor!r}")
        if self.factors < 1 or self.hidden < 1 or self.beta_hidden < 0:
            raise ConfigError("factors and hidden must be >= 1, beta_hidden >= 0")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.predict_draws < 0:
            raise ConfigError("predict_draws must be >= 0")
        if min(self.check_stocks, self.check_factors, self.check_hidden, self.check_chars,
               self.check_window) < 1:
            raise ConfigError("check_* dimensions must be >= 1")
        self.omit_counts()
        self.split_spec()

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lambda_kl, self.mc_samples, self.learning_rate, self.epochs,
                           self.patience, self.seed, self.window)

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(n_stocks=self.n_stocks, n_factors=self.n_factors, n_chars=self.n_chars,
                             n_dates=self.n_dates, seed=self.seed, sigma_f=self.sigma_f,
                             sigma_u=self.sigma_u, rho=self.rho, level_sd=self.level_sd,
                             beta_scale=self.beta_scale, start=self.start)

    def split_spec(self) -> SplitSpec:
        if not self.split_ranges:
            return SplitSpec(self.train, self.validation, self.test)
        try:
            ranges = tuple(tuple(part.split(":")) for part in self.split_ranges.split(","))
            if any(len(r) != 2 for r in ranges):
                raise ValueError
        except ValueError:
            raise ConfigError(f"split_ranges: cannot parse {self.split_ranges!r}") from None
        return SplitSpec(ranges=ranges)

    def portfolio_spec(self) -> PortfolioSpec:
        return PortfolioSpec(quantile=self.quantile, cost_rate=self.cost_rate)

    def model_dims(self, n_assets: int, n_chars: int) -> ModelDims:
        return ModelDims(n_assets=n_assets, n_factors=self.factors, hidden=self.hidden,
                         n_chars=n_chars, window=self.window, beta_hidden=self.beta_hidden or None)

    def check_dims(self) -> ModelDims:
        return ModelDims(n_assets=self.check_stocks, n_factors=self.check_factors,
                         hidden=self.check_hidden, n_chars=self.check_chars,
                         window=self.check_window)

    def omit_counts(self) -> list[int]:
        if not self.omit_m:
            return []
        try:
            counts = [int(v) for v in self.omit_m.split(",")]
        except ValueError:
            raise ConfigError(f"omit_m: expected comma-separated integers, got {self.omit_m!r}") from None
        if any(m < 1 for m in counts):
            raise ConfigError("omit_m: counts must be >= 1")
        return counts

    def truth_prefix(self) -> str:
        if self.truth:
            return self.truth
        p = Path(self.data)
        return str(p.with_suffix("")) if p.suffix == ".csv" else str(p)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TYPES = {name: type(RunConfig.__dataclass_fields__[name].default) for name in _FIELDS}


def _coerce(key: str, text: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (raw strings); validated."""
    values: dict[str, object] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        values.update(parse_config_text(p.read_text(), str(p)))
    for key, text in (overrides or {}).items():
        values[key] = _coerce(key, text)
    cfg = replace(RunConfig(), **values)
    cfg.validate()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        lines.append(f"{name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
