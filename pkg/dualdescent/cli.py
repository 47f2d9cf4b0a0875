"""Command-line interface for dualdescent."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Optional

import click
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from . import __version__
from .baselines import equivalence_check
from .config import SOLVERS, RunConfig
from .errors import DualDescentError
from .gallery import GALLERY, make
from .harness import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VIOLATION,
    load_source,
    rate_sweep,
    run_command,
    verify_suite,
)
from .problem import save_problem
from .utils import setup_logging, write_json

console = Console()


class DualDescentGroup(click.Group):
    """Click group whose usage errors exit with the configuration code (1)."""

    def main(self, *args: Any, **kwargs: Any) -> Any:
        kwargs["standalone_mode"] = False
        try:
            return super().main(*args, **kwargs)
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_CONFIG)
        except click.exceptions.Abort:
            console.print("[red]Aborted[/red]")
            sys.exit(EXIT_CONFIG)


def _fail(error: DualDescentError) -> None:
    console.print(f"[red]✗[/red] {escape(str(error))}")
    sys.exit(error.exit_code)


def solver_options(fn):
    """Problem, solver and parameter flags shared by run and sweep."""
    options = [
        click.option("--problem", default=None, help="Gallery id (G1..G4) or path to problem JSON"),
        click.option("--solver", type=click.Choice(SOLVERS), default=None, help="Solver to run"),
        click.option("--rho", type=float, default=None, help="Penalty parameter (explicit rho)"),
        click.option("--omega", type=float, default=None, help="SDD potential weight (>= 4 in strict mode)"),
        click.option("--theta", type=float, default=None, help="Prox-gradient step factor (> 1)"),
        click.option("--tau", type=float, default=None, help="SDD dual scaling"),
        click.option("--varrho", type=float, default=None, help="UDD / baseline dual step"),
        click.option("--c", "c", type=float, default=None, help="Nonlinear UDD proximal weight"),
        click.option("--nu", type=float, default=None, help="Nonlinear UDD descent constant (<= c/2)"),
        click.option("--beta", type=float, default=None, help="Penalty-ADMM slack weight (< rho)"),
        click.option("--max-iters", type=int, default=None, help="Iteration budget"),
        click.option("--seed", type=int, default=None, help="Gallery seed"),
        click.option("--rho-mode", type=click.Choice(["explicit", "eps2_rule", "eps1_rule"]), default=None),
        click.option("--sweep", "sweep_order", type=click.Choice(["gauss_seidel", "jacobi"]), default=None),
        click.option("--monitor/--no-monitor", default=None, help="Check every lemma inequality per iteration"),
        click.option("--strict/--relaxed", default=None, help="SDD strict mode (omega >= 4, boundedness checks)"),
        click.option("--trace-every", type=int, default=None, help="Keep every k-th trace row"),
        click.option("--params", "params_file", type=click.Path(dir_okay=False, path_type=Path), default=None,
                     help="YAML or JSON file of run parameters"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _overrides(**kwargs: Any) -> dict[str, Any]:
    kwargs["sweep"] = kwargs.pop("sweep_order", None)
    kwargs["output_dir"] = str(kwargs.pop("out")) if kwargs.get("out") else None
    kwargs.pop("out", None)
    return kwargs


@click.group(cls=DualDescentGroup)
@click.version_option(version=__version__, prog_name="dualdescent")
def main():
    """dualdescent - dual-descent augmented Lagrangian solvers with lemma monitors."""
    try:
        setup_logging()
    except DualDescentError as e:
        _fail(e)


@main.command()
@solver_options
@click.option("--eps", type=float, default=None, help="Target stationarity / feasibility tolerance")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory")
def run(params_file: Optional[Path], **kwargs: Any):
    """Run one solver and write trace.csv, certificate.json and summary.json."""
    try:
        config = RunConfig.resolve(_overrides(**kwargs), params_file)
    except DualDescentError as e:
        _fail(e)

    outcome = run_command(config)
    if outcome.exit_code == EXIT_OK:
        console.print(f"[green]✓[/green] {escape(outcome.message)}")
    elif outcome.exit_code in (EXIT_CONFIG, EXIT_VIOLATION):
        console.print(f"[red]✗[/red] {escape(outcome.message)}")
    else:
        console.print(f"[yellow]![/yellow] {escape(outcome.message)}")
    if outcome.out_dir is not None:
        console.print(f"[dim]artifacts in {escape(str(outcome.out_dir))}[/dim]")
    sys.exit(outcome.exit_code)


@main.command()
@solver_options
@click.option("--eps", "eps_list", type=float, multiple=True, required=True,
              help="Tolerance; repeat for each value, strictly decreasing (at least 4)")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory")
def sweep(params_file: Optional[Path], eps_list: tuple[float, ...], **kwargs: Any):
    """Iterations-to-eps against the theorem ceiling, with a log-log slope fit."""
    out = kwargs.get("out")
    try:
        config = RunConfig.resolve(_overrides(**kwargs), params_file)
        report = rate_sweep(config, eps_list, out_dir=out)
    except DualDescentError as e:
        _fail(e)

    table = Table(title=f"{config.solver} on {config.problem}")
    table.add_column("eps", justify="right")
    table.add_column("status")
    table.add_column("iterations", justify="right")
    table.add_column("ceiling", justify="right")
    table.add_column("rho", justify="right")
    for row in report.rows:
        mark = "[red]✗[/red]" if row.violation else "[green]✓[/green]"
        ceiling = f"{row.ceiling:.3g}" if row.ceiling is not None else "-"
        table.add_row(f"{row.eps:g}", f"{mark} {row.status}", str(row.iterations), ceiling, f"{row.rho:.4g}")
    console.print(table)
    if report.slope is not None:
        ci = f" (95% CI {report.slope_ci[0]:.3f}, {report.slope_ci[1]:.3f})" if report.slope_ci else ""
        console.print(f"slope of log(iterations) on log(1/eps): {report.slope:.3f}{ci}")
    for failure in report.failures:
        console.print(f"[red]✗[/red] {escape(failure)}")
    sys.exit(EXIT_OK if report.passed else EXIT_VIOLATION)


@main.command()
@click.option("--scope", default="fast", help="fast or full")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Directory for verify_report.json")
def verify(scope: str, out: Optional[Path]):
    """Run the monitor and invariant battery."""
    try:
        report = verify_suite(scope, out_dir=out)
    except DualDescentError as e:
        _fail(e)

    for check in report.checks:
        mark = "[green]✓[/green]" if check.passed else "[red]✗[/red]"
        console.print(f"  {mark} {check.name} [dim]({check.seconds:.1f}s) {escape(check.detail)}[/dim]")
    if report.passed:
        console.print(f"\n[green]✓[/green] {len(report.checks)} checks passed ({scope})")
        sys.exit(EXIT_OK)
    console.print(f"\n[red]✗[/red] failed: {', '.join(report.failures)}")
    sys.exit(EXIT_VIOLATION)


@main.command()
@click.option("--problem", default="G1", help="Gallery id or problem JSON")
@click.option("--seed", type=int, default=0)
@click.option("--gamma", type=float, multiple=True, help="Repeat for several values (default 1/3, 1, 3)")
@click.option("--rho", type=float, default=10.0)
@click.option("--iters", type=int, default=50)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Directory for equivalence.json")
def equivalence(problem: str, seed: int, gamma: tuple[float, ...], rho: float, iters: int, out: Optional[Path]):
    """Compare SDD-ADMM with the penalty-ADMM baseline under the exact parameter mapping."""
    gammas = gamma or (1.0 / 3.0, 1.0, 3.0)
    try:
        instance = load_source(RunConfig(problem=problem, seed=seed))
        reports = [equivalence_check(instance, g, rho, iters, raise_on_fail=False) for g in gammas]
    except DualDescentError as e:
        _fail(e)

    for r in reports:
        mark = "[green]✓[/green]" if r.passed else "[red]✗[/red]"
        console.print(f"  {mark} gamma={r.gamma:.4g}: max dev x {r.max_dev_x:.2e}, mu {r.max_dev_mu:.2e}")
    if out is not None:
        write_json(Path(out) / "equivalence.json", [r.to_dict() for r in reports])
    sys.exit(EXIT_OK if all(r.passed for r in reports) else EXIT_VIOLATION)


@main.group("gallery")
def gallery_group():
    """Inspect and export the built-in test problems."""


@gallery_group.command("list")
@click.option("--seed", type=int, default=0)
def gallery_list(seed: int):
    """List gallery ids with sizes, target solver and flags."""
    table = Table()
    table.add_column("id")
    table.add_column("description")
    table.add_column("dims")
    table.add_column("m", justify="right")
    table.add_column("target")
    table.add_column("flags")
    for gid, entry in GALLERY.items():
        info = make(gid, seed=seed).describe()
        flags = ", ".join(k for k, v in info["flags"].items() if v is True)
        table.add_row(gid, entry.summary, str(info["dims"]), str(info["m"]), entry.target_solver, flags)
    console.print(table)


@gallery_group.command("export")
@click.argument("gid")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
def gallery_export(gid: str, seed: int, out: Path):
    """Write gallery instance GID as problem JSON."""
    try:
        instance = make(gid, seed=seed)
    except DualDescentError as e:
        _fail(e)
    save_problem(instance.problem, out)
    console.print(f"[green]✓[/green] wrote {escape(str(out))}")


if __name__ == "__main__":
    main()
