"""
Malliavin Lab CLI - Main entry point.

Provides CLI commands for running verification experiments and summarizing reports.
"""

import logging
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import click
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from malliavin_lab import __version__
from malliavin_lab.config import get_config
from malliavin_lab.shared.ensemble import GENERATOR_ID
from malliavin_lab.shared.errors import LabError

console = Console()


def _fail(message: str):
    console.print(f"[red]❌ {message}[/red]")
    raise SystemExit(1)


@click.group()
def cli():
    """Malliavin Lab - Numerical verification of Malliavin calculus identities"""
    config = get_config()
    logging.basicConfig(
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        level=getattr(logging, config.log_level, logging.INFO),
    )


@cli.command()
@click.option("--experiment", "experiment", default=None, help="Experiment name (overrides the config file)")
@click.option("--config", "config_path", type=click.Path(), default=None, help="Experiment config file")
@click.option("--seed", type=int, default=None, help="Unsigned 64-bit master seed")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Output directory for CSV reports")
def run(experiment: Optional[str], config_path: Optional[str], seed: Optional[int], out_dir: Optional[str]):
    """Run one experiment and write its CSV report."""
    from malliavin_lab.experiments import run_experiment
    from malliavin_lab.reporting.csv_report import write_csv
    from malliavin_lab.reporting.experiment_config import (
        ExperimentConfig,
        config_hash,
        parse_config,
        validate_config,
    )

    config = get_config()
    problems = config.validate()
    if problems:
        _fail(f"Invalid settings: {'; '.join(problems)}")

    try:
        if config_path:
            cfg = parse_config(config_path)
        elif experiment:
            cfg = ExperimentConfig(experiment=experiment)
        else:
            _fail("Give --experiment or --config")
        overrides = {}
        if experiment:
            overrides["experiment"] = experiment
        if seed is not None:
            overrides["seed"] = seed
        if out_dir:
            overrides["out_dir"] = out_dir
        cfg = replace(cfg, **overrides)
        validate_config(cfg)
    except LabError as e:
        _fail(str(e))

    timestamp = datetime.now(timezone.utc).isoformat()
    try:
        with console.status(f"[bold green]Running {cfg.experiment}..."):
            rows = run_experiment(cfg, timestamp=timestamp)
    except LabError as e:
        _fail(str(e))

    target = Path(cfg.out_dir or config.output_dir) / f"{cfg.experiment}_seed{cfg.seed}.csv"
    write_csv(rows, target, config_hash=config_hash(cfg), seed=cfg.seed, timestamp=timestamp)

    table = Table(title=f"🧪 {cfg.experiment}")
    table.add_column("Parameters", overflow="fold")
    table.add_column("Value", justify="right")
    table.add_column("Std. error", justify="right")
    table.add_column("Result")
    for row in rows:
        result = {True: "[green]✅ pass[/green]", False: "[red]❌ fail[/red]", None: "[dim]-[/dim]"}[row.passed]
        table.add_row(row.parameters, f"{row.value:.6g}", f"{row.std_error:.3g}", result)
    console.print(table)

    failed = sum(1 for row in rows if row.passed is False)
    if failed:
        console.print(f"[red]❌ {failed} of {len(rows)} rows failed[/red]")
    else:
        console.print(f"[green]✅ All checks passed ({len(rows)} rows)[/green]")
    console.print(f"  Report: {target}")


@cli.command("list-experiments")
def list_experiments_command():
    """List available experiments with their defaults."""
    from malliavin_lab.experiments import ALL_EXPERIMENTS

    table = Table(title="🧪 Experiments")
    table.add_column("Name", style="bold")
    table.add_column("Description")
    table.add_column("Defaults")
    for experiment in ALL_EXPERIMENTS:
        defaults = ", ".join(f"{k}={v}" for k, v in experiment.get("defaults", {}).items())
        table.add_row(experiment["name"], experiment["description"], defaults)
    console.print(table)


@cli.command()
@click.option("--in", "in_dir", type=click.Path(), default=None, help="Directory with CSV reports")
def report(in_dir: Optional[str]):
    """Summarize the CSV reports in a directory."""
    from malliavin_lab.reporting.csv_report import summarize_reports

    directory = Path(in_dir or get_config().output_dir)
    if not directory.is_dir():
        _fail(f"Report directory not found: {directory}")

    summaries = summarize_reports(directory)
    if not summaries:
        console.print(f"[yellow]⚠️ No CSV reports in {directory}[/yellow]")
        return

    table = Table(title=f"📊 Reports in {directory}")
    table.add_column("File")
    table.add_column("Experiments")
    table.add_column("Rows", justify="right")
    table.add_column("Passed", justify="right", style="green")
    table.add_column("Failed", justify="right", style="red")
    table.add_column("Seed", justify="right")
    table.add_column("Version")
    for summary in summaries:
        table.add_row(
            summary.path.name,
            ", ".join(summary.experiments),
            str(summary.rows),
            str(summary.passed),
            str(summary.failed),
            str(summary.metadata.get("seed", "")),
            str(summary.metadata.get("version", "")),
        )
    console.print(table)

    failed = sum(summary.failed for summary in summaries)
    if failed:
        console.print(f"[red]❌ {failed} failed rows across {len(summaries)} reports[/red]")
    else:
        console.print(f"[green]✅ No failed rows across {len(summaries)} reports[/green]")


@cli.command()
def info():
    """Show configuration information."""
    config = get_config()

    console.print(Panel.fit(
        f"[bold]Version:[/bold] {__version__}\n"
        f"[bold]Environment:[/bold] {config.environment}\n"
        f"[bold]Log level:[/bold] {config.log_level}\n"
        f"[bold]Parallelism:[/bold] {config.parallelism} workers, {config.substreams} substreams\n"
        f"[bold]Generator:[/bold] {GENERATOR_ID}\n"
        f"[bold]Davie M:[/bold] {config.davie_m}\n"
        f"[bold]Output:[/bold] {config.output_dir}",
        title="🔧 Configuration",
    ))

    problems = config.validate()
    if problems:
        console.print(f"[yellow]⚠️ Problems: {', '.join(problems)}[/yellow]")
    else:
        console.print("[green]✅ Configuration complete[/green]")


def main():
    """Main entry point."""
    cli()


if __name__ == "__main__":
    main()
