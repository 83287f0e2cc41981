"""Command-line front end."""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
import sys
from typing import Any, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .config import (
    CONF_BOOTSTRAP,
    CONF_KIND,
    CONF_MONTE_CARLO,
    CONF_NU,
    CONF_RATE,
    CONF_REFERENCE,
    CONF_REPLICATES,
    CONF_SEED,
    CONF_THETA,
    CONF_TRUE,
    CONF_XI,
    ConfigError,
    build_design,
    build_mc_config,
    build_model,
    build_noise,
    build_pipeline,
    load_config,
    reference_cell,
    schema_keys,
)
from .const import (
    DATA_FLOAT_FORMAT,
    DOMAIN,
    EXIT_IO,
    EXIT_NON_IDENTIFIABLE,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_VALIDATION,
    SUMMARY_FLOAT_FORMAT,
)
from .coordinator import replicate_rng
from .direct_estimator import (
    EstimationPipeline,
    NonIdentifiableError,
    WeightScheme,
    identifiability_report,
)
from .experiments import (
    GridDesign,
    RepeatedDesign,
    juxtapose,
    rate_check,
    run_monte_carlo,
    simulate,
)
from .ode_core import (
    ContractViolationError,
    EstimationError,
    InvalidArgumentError,
    OdeModel,
    solve_ode,
)
from .smoothing import Observations, RepeatedObservations, refine_grid

_LOGGER = logging.getLogger(__name__)

COMMANDS = ("simulate", "fit", "mc", "rate", "identify")


def _csv(frame: pd.DataFrame, path: Path, float_format: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(
        path,
        index=False,
        float_format=float_format,
        lineterminator="\n",
        encoding="utf-8",
    )


def _json(payload: dict, out: Path | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8", newline="\n")


def _listed(array: np.ndarray | None) -> Any:
    return None if array is None else np.asarray(array).tolist()


def _true_parameters(config: dict, model: OdeModel) -> tuple[np.ndarray, np.ndarray]:
    true = config[CONF_TRUE]
    xi = np.asarray(true[CONF_XI], dtype=float)
    if CONF_THETA in true:
        return np.asarray(true[CONF_THETA], dtype=float), xi
    return model.h(np.asarray(true[CONF_NU], dtype=float)), xi


def dataset_frame(obs: Observations | RepeatedObservations, seed: int) -> pd.DataFrame:
    """Return the observations as a table with columns t, replicate, y1..yd, seed."""
    if isinstance(obs, RepeatedObservations):
        replicate = np.concatenate([np.arange(1, count + 1) for count in obs.counts])
    else:
        replicate = np.ones(obs.n, dtype=int)
    frame = pd.DataFrame({"t": obs.flat_times, "replicate": replicate})
    for index in range(obs.d):
        frame[f"y{index + 1}"] = obs.flat_values[:, index]
    frame["seed"] = seed
    return frame


def read_dataset(
    path: Path, design: GridDesign | RepeatedDesign, d: int
) -> Observations | RepeatedObservations:
    """Read a dataset written by ``simulate`` for the given design.

    Raises:
        InvalidArgumentError: if the table does not match the design.
    """
    frame = pd.read_csv(path)
    columns = ["t", "replicate"] + [f"y{index + 1}" for index in range(d)]
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise InvalidArgumentError(f"Dataset is missing columns {missing}")
    frame = frame.sort_values(["t", "replicate"], kind="stable")
    value_columns = columns[2:]
    if isinstance(design, GridDesign):
        if len(frame) != design.n:
            raise InvalidArgumentError(
                f"Grid design expects {design.n} rows, dataset has {len(frame)}"
            )
        return Observations(
            frame["t"].to_numpy(dtype=float),
            frame[value_columns].to_numpy(dtype=float),
            design.horizon,
        )
    groups = list(frame.groupby("t", sort=True))
    if len(groups) != design.intervals:
        raise InvalidArgumentError(
            f"Repeated design expects {design.intervals} times, dataset has {len(groups)}"
        )
    times = np.array([time for time, _ in groups], dtype=float)
    blocks = tuple(group[value_columns].to_numpy(dtype=float) for _, group in groups)
    return RepeatedObservations(times, blocks, design.horizon)


def cmd_simulate(args: argparse.Namespace, config: dict) -> int:
    """Write a simulated dataset."""
    model = build_model(config)
    theta, xi = _true_parameters(config, model)
    seed = config[CONF_SEED]
    obs = simulate(
        model, theta, xi, build_design(config), build_noise(config), replicate_rng(seed)
    )
    _csv(dataset_frame(obs, seed), args.out, DATA_FLOAT_FORMAT)
    _LOGGER.info("Wrote %d observations to %s", obs.n, args.out)
    return EXIT_OK


def cmd_fit(args: argparse.Namespace, config: dict) -> int:
    """Fit a dataset and write the estimates as JSON."""
    model = build_model(config)
    obs = read_dataset(args.data, build_design(config), model.d)
    pipeline = EstimationPipeline(model, build_pipeline(config))
    result = pipeline.estimate(
        obs,
        bootstrap=config[CONF_BOOTSTRAP],
        seed=config[CONF_SEED],
        threads=args.threads,
    )
    payload = {
        "theta_hat": _listed(result.theta_hat),
        "xi_hat": _listed(result.xi_hat),
        "nu_hat": None if model.identity_link else _listed(result.nu_hat),
        "sigma_hat": _listed(result.sigma_hat),
        "cond_c": result.cond_c,
        "criterion_value": result.criterion,
        "converged": result.converged,
    }
    _json(payload, args.out)
    _LOGGER.info("Fitted %s to %d observations", model.name, obs.n)
    return EXIT_OK


def _replicates_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}_replicates{out.suffix or '.csv'}")


def cmd_mc(args: argparse.Namespace, config: dict) -> int:
    """Run a Monte Carlo study and write summary and replicate tables."""
    result = run_monte_carlo(build_mc_config(config), threads=args.threads)
    summary = result.summary
    reference = config.get(CONF_REFERENCE)
    if reference is not None:
        summary = juxtapose(summary, reference[CONF_KIND], reference_cell(config))
    _csv(summary, args.out, SUMMARY_FLOAT_FORMAT)
    _csv(result.raw, _replicates_path(args.out), SUMMARY_FLOAT_FORMAT)
    return EXIT_OK


def cmd_rate(args: argparse.Namespace, config: dict) -> int:
    """Run the sample size ladder and write the RMSE table with its slope."""
    rate = config[CONF_RATE]
    result = rate_check(
        build_mc_config(config),
        tuple(rate["ladder"]),
        rate[CONF_REPLICATES],
        threads=args.threads,
    )
    table = result.table.astype({"n": object})
    slope_rows = pd.DataFrame(
        [
            {"n": "slope", "rmse_theta": result.slope, "rmse_xi": result.xi_slope},
            {
                "n": "slope_stderr",
                "rmse_theta": result.slope_stderr,
                "rmse_xi": result.xi_slope_stderr,
            },
        ]
    )
    _csv(pd.concat([table, slope_rows], ignore_index=True), args.out, SUMMARY_FLOAT_FORMAT)
    return EXIT_OK


def cmd_identify(args: argparse.Namespace, config: dict) -> int:
    """Report the identifiability of theta along a path."""
    model = build_model(config)
    design = build_design(config)
    pipeline = EstimationPipeline(model, build_pipeline(config))
    if args.data is not None:
        path = pipeline.smooth(read_dataset(args.data, design, model.d))
    else:
        if CONF_TRUE not in config:
            raise ConfigError("section required by identify without --data", CONF_TRUE)
        theta, xi = _true_parameters(config, model)
        grid = refine_grid(design.times, pipeline.config.refine, design.horizon)
        path = solve_ode(model, theta, xi, grid)
    report = identifiability_report(model, path, WeightScheme.uniform(path.times, model.d))
    payload = {
        "cond_c": report.cond_c,
        "rank": report.rank,
        "p": model.p,
        "identifiable": report.identifiable,
        "spectrum": _listed(report.spectrum),
        "null_space": _listed(report.null_space.T),
    }
    _json(payload, args.out)
    return EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "mc": cmd_mc,
    "rate": cmd_rate,
    "identify": cmd_identify,
}


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser with one subcommand per action."""
    parser = argparse.ArgumentParser(
        prog="direct-integral",
        description="Direct integral estimation of ODE parameters.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    epilog = "configuration keys:\n" + "\n".join(f"  {key}" for key in schema_keys())
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "write a simulated dataset as CSV",
        "fit": "fit a dataset and write the estimates as JSON",
        "mc": "run a Monte Carlo study",
        "rate": "estimate the convergence rate over a sample size ladder",
        "identify": "report the identifiability of the natural parameter",
    }
    for command in COMMANDS:
        sub = subparsers.add_parser(
            command,
            help=helps[command],
            epilog=epilog,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sub.add_argument("--config", type=Path, required=True, help="YAML run configuration")
        sub.add_argument(
            "--data",
            type=Path,
            required=command == "fit",
            default=None,
            help="dataset CSV written by simulate",
        )
        sub.add_argument(
            "--out",
            type=Path,
            required=command in ("simulate", "mc", "rate"),
            default=None,
            help="output file",
        )
        sub.add_argument("--seed", type=int, default=None, help="override the seed")
        sub.add_argument(
            "--replicates", type=int, default=None, help="override the replicate count"
        )
        sub.add_argument("--threads", type=int, default=1, help="worker threads")
        sub.add_argument(
            "-v", "--verbose", action="count", default=0, help="more log output"
        )
    return parser


def _load(args: argparse.Namespace) -> dict:
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides[CONF_SEED] = args.seed
    if args.replicates is not None:
        section = CONF_RATE if args.command == "rate" else CONF_MONTE_CARLO
        overrides[f"{section}.{CONF_REPLICATES}"] = args.replicates
    return load_config(args.config, args.command, overrides)


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=logging.WARNING,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger(DOMAIN).setLevel(level)


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line and return the exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        config = _load(args)
        return HANDLERS[args.command](args, config)
    except NonIdentifiableError as err:
        null = err.null_space
        rank = err.spectrum.size - (0 if null is None else null.shape[1])
        _LOGGER.error("%s", err)
        print(f"not identifiable: rank {rank} of {err.spectrum.size}", file=sys.stderr)
        if null is not None:
            for vector in null.T:
                print(
                    "null vector: " + " ".join(f"{value:.6g}" for value in vector),
                    file=sys.stderr,
                )
        return EXIT_NON_IDENTIFIABLE
    except (ConfigError, InvalidArgumentError, ContractViolationError) as err:
        _LOGGER.error("Invalid input: %s", err)
        return EXIT_VALIDATION
    except EstimationError as err:
        _LOGGER.error("Numeric failure: %s", err)
        return EXIT_NUMERIC
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        _LOGGER.error("I/O failure: %s", err)
        return EXIT_IO
