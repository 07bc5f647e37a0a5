"""
Unit-Root Marked Process Toolkit - Main CLI Interface
Reproducible simulation, estimation, goodness-of-fit and limit-law studies
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from pydantic import ValidationError
from rich.console import Console
from rich.table import Table
from rich import box

from backend.config import Config
from backend.experiment import ConfigError, ExperimentConfig, config_hash, load_experiment_config
from backend.harness import ExperimentHarness, convergence_study, gof_decision
from backend.reports import write_frame, write_json, write_report
from stochastics.errors import NumericalError
from stochastics.estimators import estimate
from stochastics.innovations import configure_samplers
from stochastics.limit_laws import export_ensemble
from stochastics.processes import SeriesSample, export_series_csv, import_series_csv, simulate_series
from stochastics.streams import NoiseStream

# Fix Windows encoding
if sys.platform == 'win32':
    sys.stdout.reconfigure(encoding='utf-8')

# Initialize rich console
console = Console()

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def setup_logging(verbose: bool = False):
    """
    Configure logging.

    Args:
        verbose: Enable verbose logging
    """
    level = logging.DEBUG if verbose else logging.WARNING
    handlers = [logging.StreamHandler() if verbose else logging.NullHandler()]
    if Config.LOG_FILE:
        Path(Config.LOG_FILE).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(Config.LOG_FILE))
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _stamp(config: ExperimentConfig) -> dict:
    return {"config_hash": config_hash(config), "seed": config.base_seed}


def _read_series(path: str, config: ExperimentConfig) -> SeriesSample:
    series_path = Path(path)
    if not series_path.exists():
        raise ConfigError(f"series file not found: {series_path}")
    return import_series_csv(series_path, beta=config.beta, spec=config.spec)


# ============================================================================
# Subcommands
# ============================================================================

def cmd_simulate(config: ExperimentConfig, out: Path, args) -> int:
    """Write `replicates` paths per distinct n; replicate r of size index m uses stream m R + r."""
    written = []
    for m, n in enumerate(config.distinct_n):
        for r in range(args.replicates):
            stream = NoiseStream(config.base_seed, m * config.R + r)
            series = simulate_series(config.spec, n, stream, beta=config.beta, x0=config.x0)
            path = export_series_csv(series, out / f"series_n{n}_r{r}.csv")
            written.append({"n": n, "replicate": r, "stream_id": stream.stream_id, "file": path.name})

    write_json({**_stamp(config), "series": written}, out / "simulate.json")

    table = Table(title="Simulated Series", box=box.ROUNDED)
    table.add_column("n", style="cyan", justify="right")
    table.add_column("Replicate", justify="right")
    table.add_column("Stream", justify="right")
    table.add_column("File", style="green")
    for item in written:
        table.add_row(str(item["n"]), str(item["replicate"]), str(item["stream_id"]), item["file"])
    console.print(table)
    return EXIT_OK


def cmd_estimate(config: ExperimentConfig, out: Path, args) -> int:
    """Estimate beta on the series file with the configured estimator."""
    series = _read_series(args.series, config)
    harness = ExperimentHarness(config, args.threads)
    q_tau = harness.q_tau_for(harness.reference_for(series.n))
    result = estimate(series, config.estimator, config.tau, q_tau, config.estimate_intercept)
    write_json({**_stamp(config), "n": series.n, "a_n": series.a_n, "estimate": result.to_dict()},
               out / "estimate.json")

    table = Table(title=f"Estimate ({result.label})", box=box.ROUNDED, show_header=False)
    table.add_column("Metric", style="cyan")
    table.add_column("Value")
    table.add_row("beta_hat", f"{result.beta_hat:.10g}")
    table.add_row("Scaled error", f"{result.scaled_error:.6g}")
    table.add_row("Objective", f"{result.objective_at_min:.6g}")
    table.add_row("Minimizing interval", f"[{result.minimizing_interval[0]:.10g}, {result.minimizing_interval[1]:.10g}]")
    console.print(table)
    return EXIT_OK


def cmd_gof_test(config: ExperimentConfig, out: Path, args) -> int:
    """Residual sup test of the series against the configured null model."""
    series = _read_series(args.series, config)
    decision = gof_decision(config, series, args.threads)
    write_json(decision, out / "decision.json")

    table = Table(title=f"Goodness of Fit ({decision['statistic']} = {decision['value']:.6g})", box=box.ROUNDED)
    table.add_column("Level", style="cyan", justify="right")
    table.add_column("Critical value", justify="right")
    table.add_column("Decision")
    for item in decision["decisions"]:
        verdict = "[red]reject[/red]" if item["reject"] else "[green]accept[/green]"
        table.add_row(f"{item['level']:.2f}", f"{item['critical_value']:.6g}", verdict)
    console.print(table)
    return EXIT_OK


def cmd_limit_mc(config: ExperimentConfig, out: Path, args) -> int:
    """R draws of the limit law of the configured statistic."""
    harness = ExperimentHarness(config, args.threads)
    ensemble = harness.limit_ensemble()
    if ensemble is None:
        raise NumericalError("limit law undefined: density at the quantile is zero")
    export_ensemble(ensemble, out, extra=_stamp(config))
    console.print(f"[bold]{ensemble.replications}[/bold] draws of {ensemble.kind.value} "
                  f"({ensemble.rejections} rejected) written to {out}")
    return EXIT_OK


def cmd_convergence_study(config: ExperimentConfig, out: Path, args) -> int:
    """KS distance per n plus the full comparison report."""
    with console.status("[bold cyan]Running replicates...", spinner="dots"):
        table_result = convergence_study(config, args.threads)
    write_report(table_result.report, out)
    write_frame(table_result.frame, out / "convergence.csv")
    write_json({**_stamp(config), "monotone": table_result.monotone}, out / "convergence.json")

    table = Table(title="Convergence Study", box=box.ROUNDED)
    table.add_column("n", style="cyan", justify="right")
    table.add_column("KS", justify="right")
    table.add_column("R effective", justify="right")
    for row in table_result.report.rows:
        table.add_row(str(row.n), f"{row.ks:.4f}", str(row.R_effective))
    console.print(table)
    trend = "[green]decreasing[/green]" if table_result.monotone else "[yellow]not monotone[/yellow]"
    console.print(f"Trend over the last steps: {trend}")
    console.print(f"[dim]Completed in {table_result.report.wall_time:.2f}s[/dim]")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "gof-test": cmd_gof_test,
    "limit-mc": cmd_limit_mc,
    "convergence-study": cmd_convergence_study,
}


# ============================================================================
# Argument parsing
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Marked empirical processes for unit-root AR(1) series",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py simulate --config study.json --out runs/sim
  python main.py estimate --config study.json --series runs/sim/series_n1024_r0.csv --out runs/est
  python main.py gof-test --config study.json --series data.csv --out runs/gof
  python main.py limit-mc --config study.json --out runs/limit --threads 8
  python main.py convergence-study --config study.json --out runs/conv --verbose
        """
    )

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, required=True, help='Experiment config (JSON)')
    common.add_argument('--out', type=str, default=Config.OUTPUT_DIR, help='Output directory')
    common.add_argument('--seed', type=int, default=None, help='Override base_seed (unsigned 64-bit)')
    common.add_argument('--threads', type=int, default=Config.DEFAULT_THREADS, help='Worker threads')
    common.add_argument('--verbose', action='store_true', help='Enable verbose logging')

    subparsers = parser.add_subparsers(dest='command', required=True)

    simulate = subparsers.add_parser('simulate', parents=[common], help='Simulate series CSV files')
    simulate.add_argument('--replicates', type=int, default=1, help='Series per sample size')

    for name, help_text in (('estimate', 'Estimate beta on a series file'),
                            ('gof-test', 'Residual marked-process goodness-of-fit test')):
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        sub.add_argument('--series', type=str, required=True, help='Series CSV (columns i, X_i[, eps_i])')

    subparsers.add_parser('limit-mc', parents=[common], help='Monte Carlo draws of the limit law')
    subparsers.add_parser('convergence-study', parents=[common], help='KS distance to the limit per n')
    return parser


def run(argv: Optional[list] = None) -> int:
    """
    Parse arguments, dispatch, and map failures onto exit codes.

    Returns:
        0 success, 2 config or usage error, 3 IO error, 4 numerical failure
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    configure_samplers(**Config.sampler_settings())

    if args.threads < 1:
        console.print("[red]✗ --threads must be >= 1[/red]")
        return EXIT_USAGE
    if args.seed is not None and not 0 <= args.seed <= 2**64 - 1:
        console.print("[red]✗ --seed must be an unsigned 64-bit integer[/red]")
        return EXIT_USAGE

    try:
        config = load_experiment_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](config, out, args)
    except (ConfigError, ValidationError) as e:
        console.print(f"[red]✗ Configuration error: {e}[/red]")
        return EXIT_USAGE
    except NumericalError as e:
        console.print(f"[red]✗ Numerical failure: {e}[/red]")
        return EXIT_NUMERICAL
    except ValueError as e:
        console.print(f"[red]✗ Invalid input: {e}[/red]")
        return EXIT_USAGE
    except OSError as e:
        console.print(f"[red]✗ I/O error: {e}[/red]")
        return EXIT_IO


def main():
    """Main CLI entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
