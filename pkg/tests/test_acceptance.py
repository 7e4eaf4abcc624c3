"""Acceptance gate: one test per criterion, each printing a PASS/FAIL verdict line.

Criterion 5 trains five full-size models and takes several minutes on one core.
"""

import csv
import time

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import VERDICTS
from rvrae.cli import EXIT_OK, main
from rvrae.data import (SplitSpec, SyntheticSpec, forecast_characteristics, generate_synthetic,
                        normalize_characteristics)
from rvrae.metrics import (PortfolioSpec, long_short_backtest, monthly_rank_ic, rank_ic, rank_icir,
                           sharpe, total_r2)
from rvrae.model import ModelDims, RvraeModel, TrainConfig, compute_loss, loss_gradcheck, predict
from rvrae.numerics import LatentGaussian, Tensor, gaussian_kl
from rvrae.pipeline import model_outputs, train_on_panel, zero_outputs


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    VERDICTS.append(line)
    assert ok, line


def gauss(mean, logvar):
    return LatentGaussian(Tensor(np.asarray(mean, float)), Tensor(np.asarray(logvar, float)))


# ---------------------------------------------------------------------------
# 1. gradient integrity
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_integrity():
    dims = ModelDims(n_assets=8, n_factors=2, hidden=4, n_chars=6, window=4)
    t0 = time.perf_counter()
    report = loss_gradcheck(dims, seed=0, lam=0.1, step=1e-5, tol=1e-4)
    elapsed = time.perf_counter() - t0
    verdict(1, report.passed and elapsed < 60,
            f"max rel error {report.max_rel_error:.2e} at {report.worst_parameter}, "
            f"{elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. KL oracle
# ---------------------------------------------------------------------------

def _kl_quadrature(mq, sq, mp, sp):
    def integrand(x):
        lq = -0.5 * ((x - mq) / sq) ** 2 - np.log(sq * np.sqrt(2 * np.pi))
        lp = -0.5 * ((x - mp) / sp) ** 2 - np.log(sp * np.sqrt(2 * np.pi))
        return np.exp(lq) * (lq - lp)
    val, _ = quad(integrand, mq - 8 * sq, mq + 8 * sq, epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


def test_criterion_2_kl_oracle():
    rng = np.random.default_rng(2024)
    mq, mp = rng.uniform(-2, 2, 100), rng.uniform(-2, 2, 100)
    sq, sp = np.exp(rng.uniform(-1, 1, 100)), np.exp(rng.uniform(-1, 1, 100))
    closed = gaussian_kl(gauss(mq[:, None], 2 * np.log(sq)[:, None]),
                         gauss(mp[:, None], 2 * np.log(sp)[:, None])).value
    numeric = np.array([_kl_quadrature(*args) for args in zip(mq, sq, mp, sp)])
    worst = float(np.max(np.abs(closed - numeric)))
    big = rng.normal(0, 3, size=(4, 10_000, 1))
    kl = gaussian_kl(gauss(big[0], big[1]), gauss(big[2], big[3])).value
    verdict(2, worst <= 1e-6 and bool(np.all(kl >= 0)),
            f"max |closed - quadrature| {worst:.2e} on 100 pairs, min KL {kl.min():.2e} on 1e4")


# ---------------------------------------------------------------------------
# 3. loss structure
# ---------------------------------------------------------------------------

def test_criterion_3_loss_structure():
    r = np.array([[0.3, -0.1], [0.2, 0.4]])
    hand = compute_loss(r, [Tensor(r)], gauss([[1.0], [0.0]], [[0.0], [0.0]]),
                        gauss([[0.0], [0.0]], [[0.0], [0.0]]), lam=1.0)
    example_ok = hand.kl == 0.25 and hand.reconstruction == 0.0 and hand.total == 0.25

    rng = np.random.default_rng(3)
    identity_ok = averaging_ok = True
    for _ in range(200):
        T, N, K = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 4)
        lam = rng.uniform(0, 5)
        qm, qv, pm, pv = rng.normal(size=(4, T, K))
        lb = compute_loss(rng.normal(size=(T, N)), [Tensor(rng.normal(size=(T, N)))],
                          gauss(qm, qv), gauss(pm, pv), lam)
        identity_ok &= lb.total == lb.reconstruction + lam * lb.kl
        per_step = [gaussian_kl(gauss(qm[t], qv[t]), gauss(pm[t], pv[t])).item() for t in range(T)]
        averaging_ok &= abs(lb.kl - sum(per_step) / T) <= 1e-12 * max(1.0, lb.kl)
    verdict(3, example_ok and identity_ok and averaging_ok,
            f"T=2 example kl={hand.kl!r}, identity {identity_ok}, mean over T {averaging_ok}")


# ---------------------------------------------------------------------------
# 4. leakage firewall
# ---------------------------------------------------------------------------

def test_criterion_4_leakage_firewall():
    panel, _ = generate_synthetic(SyntheticSpec(n_stocks=20, n_dates=60, seed=4))
    panel = normalize_characteristics(panel)
    dims = ModelDims(n_assets=20, n_factors=3, hidden=8, n_chars=10, window=12)
    model = RvraeModel.initialize(dims, 4)
    end = 30

    def forecast(returns):
        return predict(model, returns[end - 11:end + 1], forecast_characteristics(panel, end, 12),
                       mc_samples=8, seed=0)

    base = forecast(panel.returns)
    rng = np.random.default_rng(4)
    identical = 0
    for _ in range(100):
        future = panel.returns.copy()
        rows = rng.integers(end + 1, panel.n_dates, size=rng.integers(1, 5))
        future[rows] += rng.normal(0, 1, size=(len(rows), panel.n_stocks))
        again = forecast(future)
        identical += all(np.array_equal(getattr(base, k), getattr(again, k))
                         for k in ("expected_returns", "return_stddev", "factors", "betas",
                                   "mc_stddev"))
    verdict(4, identical == 100, f"{identical}/100 perturbations left predictions bit-identical")


# ---------------------------------------------------------------------------
# 5 and 8. synthetic recovery and transaction-cost direction
# ---------------------------------------------------------------------------

RECOVERY_SEEDS = range(5)
RECOVERY_EPOCHS = 120


@pytest.fixture(scope="module")
def recovery_runs():
    runs = []
    t0 = time.perf_counter()
    for seed in RECOVERY_SEEDS:
        panel, _ = generate_synthetic(SyntheticSpec(seed=seed))
        panel = normalize_characteristics(panel)
        dims = ModelDims(n_assets=50, n_factors=3, hidden=16, n_chars=10, window=12)
        cfg = TrainConfig(lambda_kl=0.1, learning_rate=1e-3, epochs=RECOVERY_EPOCHS, seed=seed,
                          window=12, patience=10)
        model, _, (a, b) = train_on_panel(panel, SplitSpec(), dims, cfg)
        out = model_outputs(model, panel, a, b)
        perm = np.random.default_rng(seed).permuted(out.fitted, axis=1)
        zero = zero_outputs(panel, a, b, 3)
        runs.append({"report": out.report("rvrae"),
                     "perm_ic": float(np.nanmean(monthly_rank_ic(perm, out.realized, out.mask))),
                     "zero_r2": total_r2(zero.realized, zero.fitted, zero.mask),
                     "outputs": out})
    return runs, time.perf_counter() - t0


def test_criterion_5_synthetic_recovery(recovery_runs):
    runs, elapsed = recovery_runs
    r2 = float(np.median([r["report"].total_r2 for r in runs]))
    ic = float(np.median([r["report"].rank_ic_mean for r in runs]))
    perm = float(np.median([abs(r["perm_ic"]) for r in runs]))
    zero = float(np.median([r["zero_r2"] for r in runs]))
    ok = r2 >= 0.30 and r2 > zero and ic >= 0.10 and ic >= 3 * perm and elapsed < 900
    verdict(5, ok, f"median R2 {r2:.3f} (zero baseline {zero:.3f}), median Rank IC {ic:.3f} "
                   f"vs permuted {perm:.3f}, {elapsed:.0f}s for {len(runs)} seeds")


def test_criterion_8_costs_lower_sharpe(recovery_runs, tmp_path):
    spec = PortfolioSpec(quantile=0.1, cost_rate=0.003)
    pairs = []
    for r in recovery_runs[0]:
        out = r["outputs"]
        for pred in (out.forecasts, out.fitted):
            bt = long_short_backtest(pred, out.realized, spec, out.mask)
            pairs.append((sharpe(bt.gross), sharpe(bt.net), bt.turnover.sum()))
    assert main(["gen", "--seed", "8", "--data", str(tmp_path / "p.csv")]) == EXIT_OK
    assert main(["eval", "--predictor", "oracle", "--data", str(tmp_path / "p.csv"),
                 "--out-dir", str(tmp_path)]) == EXIT_OK
    with open(tmp_path / "eval_summary.csv") as fh:
        row = next(csv.DictReader(fh))
    pairs.append((float(row["sharpe_gross"]), float(row["sharpe_net"]), 1.0))
    bad = [(g, n) for g, n, turn in pairs if turn > 0 and not n < g]
    verdict(8, not bad, f"net < gross Sharpe on {len(pairs) - len(bad)}/{len(pairs)} backtests")


# ---------------------------------------------------------------------------
# 6. omission protocol
# ---------------------------------------------------------------------------

def test_criterion_6_omission_protocol(tmp_path):
    common = ["--n-stocks", "200", "--n-dates", "84", "--window", "6", "--hidden", "8",
              "--epochs", "2", "--patience", "2", "--data", str(tmp_path / "p.csv"),
              "--out-dir", str(tmp_path)]
    assert main(["gen", *common]) == EXIT_OK
    code = main(["eval", *common, "--omit-m", "50,100,150", "--seeds", "10"])
    with open(tmp_path / "omission_summary.csv") as fh:
        summary = list(csv.DictReader(fh))
    with open(tmp_path / "omission_runs.csv") as fh:
        runs = list(csv.DictReader(fh))
    layout = [row["m"] for row in summary] == ["50", "100", "150"] and all(
        "(" in row["Rank IC"] and "(" in row["Rank ICIR"] for row in summary)
    scored = len(runs) == 30 and all(r["n_scored"] == r["m"] for r in runs)
    finite = all(np.isfinite(float(r["rank_ic"])) for r in runs)
    cells = "; ".join(f"m={r['m']} IC {r['Rank IC']} ICIR {r['Rank ICIR']}" for r in summary)
    verdict(6, code == EXIT_OK and layout and scored and finite, cells)


# ---------------------------------------------------------------------------
# 7. metric oracles
# ---------------------------------------------------------------------------

def test_criterion_7_metric_oracles():
    a = np.array([0.4, -0.3, 0.1, 0.9, -0.7])
    checks = {
        "total_r2": (total_r2([[1.0, 2.0]], [[1.0, 1.0]]), 0.8),
        "sharpe": (sharpe([0.02, 0.00, 0.04]), 1.0),
        "icir": (rank_icir([0.1, 0.3]), np.sqrt(2.0)),
        "ic+": (rank_ic(a, 3 * a - 1), 1.0),
        "ic-": (rank_ic(a, -a), -1.0),
    }
    errors = {k: abs(got - want) for k, (got, want) in checks.items()}
    verdict(7, all(e <= 1e-12 for e in errors.values()),
            ", ".join(f"{k} err {e:.1e}" for k, e in errors.items()))


# ---------------------------------------------------------------------------
# 9. determinism
# ---------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    def pipeline(root):
        common = ["--n-stocks", "10", "--n-dates", "60", "--window", "6", "--hidden", "6",
                  "--epochs", "3", "--seed", "9", "--data", str(root / "p.csv"),
                  "--checkpoint", str(root / "m.ckpt"), "--out-dir", str(root)]
        for cmd in ("gen", "train", "eval"):
            assert main([cmd, *common]) == EXIT_OK
        names = ["p.csv", "m.ckpt", "history.csv", "eval_summary.csv", "eval_monthly.csv"]
        return {n: (root / n).read_bytes() for n in names}

    first, second = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    same = [n for n in first if first[n] == second[n]]
    verdict(9, len(same) == len(first), f"{len(same)}/{len(first)} artifacts byte-identical")
