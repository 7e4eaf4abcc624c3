"""Command-line front end: ``gen``, ``train``, ``eval``, ``predict``, ``gradcheck``.

Every command reads a :class:`~rvrae.config.RunConfig` from ``--config PATH``
(optional) with any key overridden as ``--key value`` (``--omit-m`` and
``--omit_m`` are equivalent).  Outputs are CSV files or checkpoints.

Exit codes: 0 success, 1 check failure, 2 configuration or input error,
3 checkpoint/data incompatibility.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config, load_config
from .data import (IntegrityError, ParseError, PanelDataset, forecast_characteristics,
                   generate_synthetic, load_csv, load_ground_truth, normalize_characteristics,
                   write_csv, write_ground_truth)
from .errors import AlignmentError, ConfigError, IncompatibleError
from .metrics import write_reports
from .model import RvraeModel, loss_gradcheck, predict, train
from .numerics import CheckpointError, corrupt_backward
from .pipeline import (model_outputs, omission_run, oracle_outputs, split_bounds,
                       summarize_omission, validation_panel, zero_outputs)

logger = logging.getLogger("rvrae")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_INCOMPATIBLE = 0, 1, 2, 3
COMMANDS = ("gen", "train", "eval", "predict", "gradcheck")


class CheckFailure(RuntimeError):
    """A verification command found a problem."""


def _require_file(path: str, key: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{key}: file {p} does not exist")
    return p


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_panel(cfg: RunConfig) -> PanelDataset:
    panel = load_csv(_require_file(cfg.data, "data"))
    return normalize_characteristics(panel) if cfg.normalize else panel


def _load_model(cfg: RunConfig, path: str, panel: PanelDataset) -> RvraeModel:
    try:
        model = RvraeModel.load(path)
    except (CheckpointError, ConfigError) as exc:
        raise IncompatibleError(str(exc)) from None
    d = model.dims
    if d.n_assets != panel.n_stocks or d.n_chars != panel.n_chars:
        raise IncompatibleError(f"checkpoint expects N={d.n_assets}, C={d.n_chars}; "
                                f"panel has N={panel.n_stocks}, C={panel.n_chars}")
    if d.window != cfg.window:
        raise IncompatibleError(f"checkpoint window T={d.window} != config window {cfg.window}")
    return model


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(cfg: RunConfig) -> int:
    panel, truth = generate_synthetic(cfg.synthetic_spec())
    Path(cfg.data).parent.mkdir(parents=True, exist_ok=True)
    write_csv(panel, cfg.data)
    write_ground_truth(cfg.truth_prefix(), panel, truth)
    print(f"wrote {panel.n_dates * panel.n_stocks} rows to {cfg.data}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    if cfg.resume:
        _require_file(cfg.resume, "resume")
    panel = _load_panel(cfg)
    (a, b), val_bounds, _ = split_bounds(panel, cfg.split_spec())
    train_panel = panel.slice_dates(a, b)
    val_panel = validation_panel(panel, val_bounds, cfg.window)
    if cfg.resume:
        model = _load_model(cfg, cfg.resume, panel)
    else:
        model = RvraeModel.initialize(cfg.model_dims(panel.n_stocks, panel.n_chars), cfg.seed)
    out = _out_dir(cfg)
    Path(cfg.checkpoint).parent.mkdir(parents=True, exist_ok=True)
    if cfg.epochs == 0:
        model.save(cfg.checkpoint)
        (out / "history.csv").write_text("epoch,train_recon,train_kl,val_recon,val_kl,total\n")
        print(f"epochs=0: saved initial parameters to {cfg.checkpoint}")
        return EXIT_OK
    trained, history = train(model, train_panel, val_panel, cfg.train_config())
    trained.save(cfg.checkpoint)
    history.to_csv(out / "history.csv")
    print(f"trained {len(history.records)} epochs, best epoch {history.best_epoch}"
          f"{' (diverged)' if history.diverged else ''}; checkpoint {cfg.checkpoint}")
    return EXIT_OK


def _write_omission(cfg: RunConfig, panel: PanelDataset, out: Path) -> None:
    counts = cfg.omit_counts()
    for m in counts:
        if m >= panel.n_stocks:
            raise ConfigError(f"omit_m: {m} stocks cannot be omitted from N={panel.n_stocks}")
    dims = cfg.model_dims(panel.n_stocks, panel.n_chars)
    rows, summary = [], []
    for m in counts:
        runs = [omission_run(panel, cfg.split_spec(), dims, cfg.train_config(), m, cfg.seed + s)
                for s in range(cfg.seeds)]
        rows.extend(runs)
        summary.append((m, summarize_omission(runs)))
    with open(out / "omission_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "seed", "n_scored", "rank_ic", "rank_icir"])
        for r in rows:
            w.writerow([r.m, r.seed, r.n_scored, repr(r.rank_ic), repr(r.rank_icir)])
    with open(out / "omission_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "Rank IC", "Rank ICIR", "rank_ic_mean", "rank_ic_sd", "rank_icir_mean",
                    "rank_icir_sd", "runs"])
        for m, s in summary:
            w.writerow([m, f"{s['rank_ic_mean']:.4f}({s['rank_ic_sd']:.4f})",
                        f"{s['rank_icir_mean']:.4f}({s['rank_icir_sd']:.4f})",
                        repr(s["rank_ic_mean"]), repr(s["rank_ic_sd"]),
                        repr(s["rank_icir_mean"]), repr(s["rank_icir_sd"]), cfg.seeds])
    for m, s in summary:
        print(f"omit m={m}: Rank IC {s['rank_ic_mean']:.4f}({s['rank_ic_sd']:.4f}) "
              f"Rank ICIR {s['rank_icir_mean']:.4f}({s['rank_icir_sd']:.4f})")


def cmd_eval(cfg: RunConfig) -> int:
    if cfg.predictor == "model" and not cfg.omit_m:
        _require_file(cfg.checkpoint, "checkpoint")
    panel = _load_panel(cfg)
    out = _out_dir(cfg)
    if cfg.omit_m:
        _write_omission(cfg, panel, out)
        return EXIT_OK
    start, stop = split_bounds(panel, cfg.split_spec())[2]
    if cfg.predictor == "model":
        model = _load_model(cfg, cfg.checkpoint, panel)
        outputs = model_outputs(model, panel, max(start, model.dims.window), stop)
    elif cfg.predictor == "oracle":
        truth = load_ground_truth(cfg.truth_prefix(), panel)
        outputs = oracle_outputs(truth, panel, max(start, 1), stop)
    else:
        outputs = zero_outputs(panel, start, stop, cfg.factors)
    report = outputs.report(cfg.predictor, cfg.portfolio_spec())
    report.write(out / "eval_summary.csv", out / "eval_monthly.csv")
    print(f"{cfg.predictor}: total R2 {report.total_r2:.4f}, Rank IC {report.rank_ic_mean:.4f}, "
          f"Sharpe gross/net {report.sharpe_gross:.4f}/{report.sharpe_net:.4f}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    _require_file(cfg.checkpoint, "checkpoint")
    panel = _load_panel(cfg)
    model = _load_model(cfg, cfg.checkpoint, panel)
    end = panel.n_dates - 1
    if cfg.as_of:
        if cfg.as_of not in panel.dates:
            raise ConfigError(f"as_of: date {cfg.as_of} is not in the panel")
        end = panel.dates.index(cfg.as_of)
    T = model.dims.window
    if end < T - 1:
        raise ConfigError(f"as_of: need {T} months of history, have {end + 1}")
    pred = predict(model, panel.returns[end - T + 1:end + 1], forecast_characteristics(panel, end, T),
                   mc_samples=cfg.predict_draws, seed=cfg.seed)
    out = _out_dir(cfg)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["as_of", "ticker", "expected_return", "return_stddev", "mc_stddev"])
        mc = pred.mc_stddev if pred.mc_stddev is not None else np.full(panel.n_stocks, np.nan)
        for i, tk in enumerate(panel.tickers):
            w.writerow([panel.dates[end], tk, repr(float(pred.expected_returns[i])),
                        repr(float(pred.return_stddev[i])),
                        "" if not np.isfinite(mc[i]) else repr(float(mc[i]))])
    print(f"wrote {panel.n_stocks} forecasts for the month after {panel.dates[end]}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig) -> int:
    if cfg.corrupt_op:
        with corrupt_backward(cfg.corrupt_op):
            report = loss_gradcheck(cfg.check_dims(), cfg.seed, cfg.lambda_kl, tol=cfg.check_tol)
    else:
        report = loss_gradcheck(cfg.check_dims(), cfg.seed, cfg.lambda_kl, tol=cfg.check_tol)
    out = _out_dir(cfg)
    with open(out / "gradcheck.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "max_rel_error", "passed"])
        for name, err in report.per_parameter.items():
            w.writerow([name, repr(err), str(err <= report.tol).lower()])
    for name, err in report.per_parameter.items():
        print(f"{name:24s} {err:.3e}")
    status = "PASS" if report.passed else "FAIL"
    print(f"{status}: max relative error {report.max_rel_error:.3e} "
          f"(tol {report.tol:g}) at {report.worst_parameter}")
    if not report.passed:
        raise CheckFailure(f"gradient mismatch in parameter {report.worst_parameter}")
    return EXIT_OK


_HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
             "gradcheck": cmd_gradcheck}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rvrae", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--verbose", "-v", action="store_true", help="log training progress")
    parser.add_argument("--dump-config", action="store_true",
                        help="print the resolved configuration before running")
    keys = parser.add_argument_group("config keys (override the file)")
    for f in fields(RunConfig):
        names = [f"--{f.name}"]
        if "_" in f.name:
            names.append(f"--{f.name.replace('_', '-')}")
        keys.add_argument(*names, dest=f"key_{f.name}", metavar="VALUE", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}
    try:
        cfg = load_config(args.config, overrides)
        if args.dump_config:
            print(dump_config(cfg), end="")
        return _HANDLERS[args.command](cfg)
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except IncompatibleError as exc:
        print(f"incompatible: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (ConfigError, ParseError, IntegrityError, AlignmentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
