"""The full model: exposures from the LSTM times factors from the variational RNN.

Training (posterior path)::

    returns window --encoder--> q(z_t), h_t --prior(h_{t-1})--> p(z_t)
    z_T ~ q(z_T) --decoder, teacher forced--> f_t in (0,1)^K
    characteristics --LSTM--> beta_t ;  fitted_t = beta_t . f_t
    loss = mean_l mean_t ||r_t - fitted_t||^2 + lambda * mean_t KL(q_t || p_t)

Prediction (prior path) never reads the month being forecast: the latent is
the prior mean given the last encoder state, and one extra decoder step fed
with the decoder's own return forecast yields the next-month factors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import beta_net, factor_net
from .data import PanelDataset, Window, build_windows
from .errors import AlignmentError, ConfigError
from .numerics import (AdamState, GradCheckReport, LatentGaussian, NumericError, ParamStore, Rng, Tape, Tensor, add,
                       adam_step, batched_matvec, derive_seed, detach, exp, gaussian_kl, mean, mul,
                       sample_standard_normal, scale, stack, sub, take, tsum,
                       grad_check, load_checkpoint, save_checkpoint)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelDims:
    n_assets: int                 # N: universe fed to the factor network
    n_factors: int = 5            # K
    hidden: int = 16              # H: encoder/prior/decoder state size
    n_chars: int = 46             # C
    window: int = 12              # T
    beta_hidden: int | None = None  # LSTM width; defaults to K (exposure = h_T)

    @property
    def lstm_hidden(self) -> int:
        return self.n_factors if self.beta_hidden is None else self.beta_hidden

    def header(self) -> dict[str, int]:
        return {"N": self.n_assets, "K": self.n_factors, "H": self.hidden, "C": self.n_chars,
                "T": self.window, "HB": self.lstm_hidden}

    @classmethod
    def from_header(cls, header: dict[str, str]) -> "ModelDims":
        try:
            return cls(n_assets=int(header["N"]), n_factors=int(header["K"]), hidden=int(header["H"]),
                       n_chars=int(header["C"]), window=int(header["T"]),
                       beta_hidden=int(header["HB"]))
        except KeyError as exc:
            raise ConfigError(f"checkpoint header lacks {exc}") from None


class RvraeModel:
    def __init__(self, dims: ModelDims, params: ParamStore):
        self.dims = dims
        self.params = params

    @classmethod
    def initialize(cls, dims: ModelDims, seed: int) -> "RvraeModel":
        rng = Rng(derive_seed(seed, "init"))
        params = ParamStore()
        factor_net.init_factor_params(params, rng.child("factor"), dims.n_assets, dims.n_factors,
                                      dims.hidden)
        beta_net.init_beta_params(params, rng.child("beta"), dims.n_chars, dims.lstm_hidden,
                                  dims.n_factors)
        return cls(dims, params)

    def copy(self) -> "RvraeModel":
        return RvraeModel(self.dims, self.params.copy())

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.dims.header())

    @classmethod
    def load(cls, path) -> "RvraeModel":
        params, header = load_checkpoint(path)
        dims = ModelDims.from_header(header)
        expected = cls.initialize(dims, 0).params
        if list(expected) != list(params) or any(
                expected[n].shape != params[n].shape for n in params):
            raise ConfigError(f"{path}: parameters do not match header dimensions")
        return cls(dims, params)


# ---------------------------------------------------------------------------
# configuration and loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lambda_kl: float = 0.1
    mc_samples: int = 1
    learning_rate: float = 1e-3
    epochs: int = 200
    patience: int = 10
    seed: int = 0
    window: int = 12

    def validate(self) -> None:
        if self.lambda_kl < 0:
            raise ConfigError("lambda_kl must be >= 0")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 0 or self.patience < 1:
            raise ConfigError("epochs must be >= 0 and patience >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction: float
    kl: float
    lam: float
    total: float
    objective: Tensor | None = field(default=None, repr=False, compare=False)


def compute_loss(returns, fitted_samples: Sequence[Tensor], posterior: LatentGaussian,
                 prior: LatentGaussian, lam: float, mask=None) -> LossBreakdown:
    """Monte-Carlo reconstruction error plus ``lam`` times the time-averaged KL.

    ``reconstruction = (1/L) sum_l (1/T) sum_t ||m_t * (r_t - fitted_t^l)||^2`` where
    ``m`` masks missing returns; ``kl = (1/T) sum_t KL(q_t || p_t)``.
    """
    if lam < 0:
        raise ConfigError("KL weight lambda must be >= 0")
    if not fitted_samples:
        raise ConfigError("need at least one reconstruction sample")
    r = returns if isinstance(returns, Tensor) else Tensor(returns)
    T = r.shape[0]
    m = Tensor(np.ones(r.shape) if mask is None else np.asarray(mask, dtype=float))
    per_sample = []
    for fitted in fitted_samples:
        err = mul(sub(r, fitted), m)
        per_sample.append(scale(tsum(mul(err, err)), 1.0 / T))
    recon = per_sample[0]
    for s in per_sample[1:]:
        recon = add(recon, s)
    recon = scale(recon, 1.0 / len(per_sample))
    kl = mean(gaussian_kl(posterior, prior))
    total = add(recon, scale(kl, lam))
    return LossBreakdown(recon.item(), kl.item(), lam, recon.item() + lam * kl.item(), total)


def head_nll(returns, mask, recon: LatentGaussian) -> Tensor:
    """Gaussian negative log-likelihood (constant dropped) of returns under the heads, per month."""
    r = Tensor(returns)
    m = Tensor(np.asarray(mask, dtype=float))
    d = sub(r, recon.mean)
    inv_var = exp(scale(recon.log_variance, -1.0))
    per = add(recon.log_variance, mul(mul(d, d), inv_var))
    return scale(tsum(mul(per, m)), 0.5 / r.shape[0])


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

@dataclass
class ForwardResult:
    fitted: list[Tensor]          # one [T, N] reconstruction per Monte-Carlo sample
    posterior: LatentGaussian     # [T, K]
    prior: LatentGaussian         # [T, K]
    factors: list[Tensor]         # [T, K] per sample
    betas: Tensor                 # [T, N, K]
    recon: LatentGaussian         # [T, N] head distribution of r_t given h_{t-1}, state detached


def _check_window(dims: ModelDims, returns: np.ndarray, chars: np.ndarray) -> None:
    if returns.ndim != 2 or returns.shape[1] != dims.n_assets:
        raise AlignmentError(f"returns window {returns.shape} does not match N={dims.n_assets}")
    if chars.ndim != 3 or chars.shape[0] != returns.shape[0] or chars.shape[2] != dims.n_chars:
        raise AlignmentError(f"characteristics window {chars.shape} does not match returns "
                             f"{returns.shape} and C={dims.n_chars}")


def forward_train(p, dims: ModelDims, returns: np.ndarray, characteristics: np.ndarray,
                  eps: Sequence[Tensor] | None) -> ForwardResult:
    """Posterior-path forward pass over one window.

    ``eps`` holds one ``[K]`` standard-normal draw per Monte-Carlo sample;
    ``None`` uses the posterior mean (deterministic evaluation).
    """
    _check_window(dims, returns, characteristics)
    rows = [Tensor(r) for r in returns]
    post, hidden = factor_net.encode_sequence(rows, p)
    prior = factor_net.priors_for_sequence(hidden, p)
    q_last = LatentGaussian(take(post.mean, -1), take(post.log_variance, -1))
    draws = [None] if eps is None else list(eps)
    betas = beta_net.beta_from_characteristics(characteristics, p, every_step=True)
    fitted, factors, last_dec = [], [], None
    for e in draws:
        z = q_last.mean if e is None else factor_net.reparameterize(q_last, e)
        dec = factor_net.decode_sequence(z, rows, p)
        factors.append(dec.factors)
        fitted.append(batched_matvec(betas, dec.factors))
        last_dec = dec
    # heads read h_{t-1} for month t; detached so they never steer the main objective
    prev = stack([detach(last_dec.initial), *[detach(h) for h in last_dec.hidden[:-1]]])
    recon = factor_net.reconstruction_heads(prev, p)
    return ForwardResult(fitted, post, prior, factors, betas, recon)


def window_loss(model: RvraeModel, p, window: Window, lam: float, eps) -> tuple[LossBreakdown, Tensor]:
    fr = forward_train(p, model.dims, window.returns, window.characteristics, eps)
    loss = compute_loss(window.returns, fr.fitted, fr.posterior, fr.prior, lam, window.mask)
    aux = head_nll(window.returns, window.mask, fr.recon)
    return loss, add(loss.objective, aux)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_recon: float
    train_kl: float
    val_recon: float
    val_kl: float
    total: float  # validation total loss, the early-stopping criterion


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    diverged: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_recon,train_kl,val_recon,val_kl,total\n")
            for r in self.records:
                fh.write(",".join([str(r.epoch)] + [repr(float(v)) for v in
                                                   (r.train_recon, r.train_kl, r.val_recon,
                                                    r.val_kl, r.total)]) + "\n")


def evaluate_loss(model: RvraeModel, windows: Sequence[Window], lam: float) -> tuple[float, float]:
    """Mean reconstruction and KL over ``windows`` using posterior means (no sampling)."""
    if not windows:
        raise ConfigError("no windows to evaluate")
    p = model.params.constants()
    rec = kl = 0.0
    for w in windows:
        fr = forward_train(p, model.dims, w.returns, w.characteristics, None)
        lb = compute_loss(w.returns, fr.fitted, fr.posterior, fr.prior, lam, w.mask)
        rec += lb.reconstruction
        kl += lb.kl
    return rec / len(windows), kl / len(windows)


def train(model: RvraeModel, train_panel: PanelDataset, val_panel: PanelDataset,
          config: TrainConfig) -> tuple[RvraeModel, TrainHistory]:
    """Adam over shuffled rolling windows with early stopping on validation loss.

    Returns a copy holding the best-validation parameters.  The input model
    is not modified.  Deterministic for a fixed ``config.seed``.
    """
    config.validate()
    if config.window != model.dims.window:
        raise ConfigError(f"config window {config.window} != model window {model.dims.window}")
    train_w = build_windows(train_panel, config.window)
    val_w = build_windows(val_panel, config.window)
    if not train_w or not val_w:
        raise ConfigError("train and validation splits must each hold at least one full window")

    work = model.copy()
    best = model.copy()
    history = TrainHistory()
    state = AdamState(lr=config.learning_rate)
    order_rng = Rng(derive_seed(config.seed, "window-order"))
    eps_rng = Rng(derive_seed(config.seed, "reparameterize"))
    K = model.dims.n_factors
    best_val, since_best = np.inf, 0

    for epoch in range(1, config.epochs + 1):
        rec_sum = kl_sum = 0.0
        try:
            for idx in order_rng.permutation(len(train_w)):
                w = train_w[idx]
                leaves = work.params.bind()
                eps = [sample_standard_normal(eps_rng, K) for _ in range(config.mc_samples)]
                with Tape() as tape:
                    lb, objective = window_loss(work, leaves, w, config.lambda_kl, eps)
                tape.backward(objective)
                work.params.accumulate(leaves)
                adam_step(work.params, state)
                rec_sum += lb.reconstruction
                kl_sum += lb.kl
            val_rec, val_kl = evaluate_loss(work, val_w, config.lambda_kl)
        except (NumericError, FloatingPointError) as exc:
            logger.warning("training diverged in epoch %d: %s", epoch, exc)
            history.diverged = True
            break
        val_total = val_rec + config.lambda_kl * val_kl
        history.records.append(EpochRecord(epoch, rec_sum / len(train_w), kl_sum / len(train_w),
                                           val_rec, val_kl, val_total))
        logger.info("epoch %d train_recon=%.6g val_total=%.6g", epoch, rec_sum / len(train_w), val_total)
        if val_total < best_val:
            best_val, since_best = val_total, 0
            best = work.copy()
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                history.stopped_early = True
                break
    return best, history


# ---------------------------------------------------------------------------
# prediction and fitted values
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prediction:
    expected_returns: np.ndarray   # [M]
    return_stddev: np.ndarray      # [N] decoder-head sd for the factor-network universe
    factors: np.ndarray            # [K]
    betas: np.ndarray              # [M, K]
    mc_stddev: np.ndarray | None = None  # [M] sd of beta . f under prior sampling


def predict(model: RvraeModel, returns_window: np.ndarray, char_window: np.ndarray,
            mc_samples: int = 0, seed: int = 0) -> Prediction:
    """One-month-ahead forecast from history only.

    ``returns_window`` is ``[T, N]`` ending at the current month ``t``.
    ``char_window`` is ``[T, M, C]`` holding the characteristic slots
    ``t-T+2 .. t+1``, i.e. ending with the values known at ``t`` that precede
    the return at ``t+1``; ``M`` may differ from ``N`` (any stock can be scored).
    With ``mc_samples > 0`` the prior is sampled to propagate latent
    uncertainty to ``mc_stddev``.
    """
    dims = model.dims
    returns_window = np.asarray(returns_window, dtype=float)
    char_window = np.asarray(char_window, dtype=float)
    if returns_window.ndim != 2 or returns_window.shape[0] < dims.window:
        raise AlignmentError(f"need a returns window of {dims.window} months, got {returns_window.shape}")
    if char_window.ndim != 3 or char_window.shape[0] < dims.window:
        raise AlignmentError(f"need a characteristics window of {dims.window} months, "
                             f"got {char_window.shape}")
    returns_window = returns_window[-dims.window:]
    char_window = char_window[-dims.window:]
    if returns_window.shape[1] != dims.n_assets or char_window.shape[2] != dims.n_chars:
        raise AlignmentError("window dimensions do not match the model")

    p = model.params.constants()
    rows = [Tensor(r) for r in returns_window]
    _, hidden = factor_net.encode_sequence(rows, p)
    prior = factor_net.prior_from_hidden(hidden[-1], p)
    betas = beta_net.beta_from_characteristics(char_window, p).value

    def next_factors(z: Tensor):
        dec = factor_net.decode_sequence(z, rows, p)
        heads = factor_net.reconstruction_heads(dec.hidden[-1], p)
        h_next = factor_net.decoder_step(dec.hidden[-1], heads.mean, p)
        return factor_net.factor_output(h_next, p).value, heads

    f, heads = next_factors(prior.mean)
    mc = None
    if mc_samples > 0:
        rng = Rng(derive_seed(seed, "predict-mc"))
        draws = [betas @ next_factors(factor_net.reparameterize(
            prior, sample_standard_normal(rng, dims.n_factors)))[0] for _ in range(mc_samples)]
        mc = np.std(np.array(draws), axis=0, ddof=1) if mc_samples > 1 else np.zeros(len(betas))
    return Prediction(betas @ f, np.exp(0.5 * heads.log_variance.value), f, betas, mc)


@dataclass(frozen=True)
class Fitted:
    fitted: np.ndarray    # [M] beta_t . f_t for the last month of the window
    factors: np.ndarray   # [K]
    betas: np.ndarray     # [M, K]


def fit_last(model: RvraeModel, returns_window: np.ndarray, char_window: np.ndarray) -> Fitted:
    """Contemporaneous fit of the window's last month (posterior mean, teacher forced).

    This is the quantity scored by total R^2: factors extracted from the same
    month's cross-section.  ``char_window`` may cover any set of stocks.
    """
    dims = model.dims
    if returns_window.shape[0] != dims.window or char_window.shape[0] != dims.window:
        raise AlignmentError(f"windows must span {dims.window} months")
    p = model.params.constants()
    rows = [Tensor(r) for r in returns_window]
    post, _ = factor_net.encode_sequence(rows, p)
    dec = factor_net.decode_sequence(take(post.mean, -1), rows, p)
    f = dec.factors.value[-1]
    betas = beta_net.beta_from_characteristics(char_window, p).value
    return Fitted(betas @ f, f, betas)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def loss_gradcheck(dims: ModelDims, seed: int = 0, lam: float = 0.1, step: float = 1e-5,
                   tol: float = 1e-4) -> GradCheckReport:
    """Finite-difference check of ``reconstruction + lam * kl`` on one random window.

    The auxiliary head likelihood is left out: its inputs are detached on
    purpose, so its tape gradient is not the full derivative.  The window, the Monte-Carlo draw and the initial parameters all derive
    from ``seed``; every parameter entry is perturbed.
    """
    rng = Rng(derive_seed(seed, "gradcheck"))
    T, N, C, K = dims.window, dims.n_assets, dims.n_chars, dims.n_factors
    returns = 0.1 * rng.normal((T, N))
    chars = 2.0 * rng.uniform(T * N * C).reshape(T, N, C) - 1.0
    mask = np.ones((T, N), dtype=bool)
    mask[0, 0] = False
    window = Window(returns, mask, chars, T - 1)
    eps = [Tensor(rng.normal(K))]
    model = RvraeModel.initialize(dims, seed)

    def objective(p):
        return window_loss(model, p, window, lam, eps)[0].objective

    return grad_check(objective, model.params, step=step, tol=tol)
