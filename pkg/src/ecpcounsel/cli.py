"""Command line entry points.

Four subcommands: validate documents, try the fuzzy matcher from a shell,
run the scenario suite, and serve the HTTP API. Exit code 0 means success,
1 means a domain failure (invalid document, failing scenario, no match),
2 is click's usage-error code.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .agent_graph import fixed_clock
from .conversation_spec import load_spec
from .errors import CounselError
from .knowledge_base import Table, load_kb_file
from .matching_tools import (
    DEFAULT_THRESHOLD,
    SCORE_DECIMALS,
    find_most_similar_word_allergies,
    find_most_similar_word_regular_medications_and_diseases,
)
from .rulebook import PROFILES
from .scenario_harness import load_scenario_dir, run_suite

_SPEC_OPT = click.option(
    "--spec",
    "spec_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Conversation spec YAML file.",
)
_KB_OPT = click.option(
    "--kb",
    "kb_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    help="Knowledge base YAML file.",
)


@click.group()
@click.version_option(__version__, prog_name="ecpcounsel")
def main() -> None:
    """Counseling runtime for emergency contraceptive sales."""


@main.command()
@_SPEC_OPT
@_KB_OPT
def validate(spec_path: Path, kb_path: Path) -> None:
    """Parse and validate a spec and knowledge base pair."""
    try:
        spec = load_spec(spec_path)
        kb = load_kb_file(kb_path)
        # Building the runtime also validates agent profiles against the
        # tool registry and the peer graph.
        from .agents import build_runtime

        build_runtime(spec, kb)
    except CounselError as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)
    mandatory = sum(1 for s in spec.steps if s.mandatory)
    click.echo(f"spec ok: {spec.medication_id} v{spec.version}, "
               f"{len(spec.steps)} steps ({mandatory} mandatory)")
    click.echo(f"kb ok: {len(kb.products)} products, "
               f"{len(kb.allergies)} allergy terms, "
               f"{len(kb.medications_and_diseases)} medication and disease terms, "
               f"{len(kb.aliases)} aliases")


@main.command()
@click.argument("term")
@_KB_OPT
@click.option(
    "--table",
    type=click.Choice([t.value for t in Table]),
    default=Table.ALLERGIES.value,
    show_default=True,
    help="Which contraindication table to search.",
)
@click.option("--threshold", type=float, default=DEFAULT_THRESHOLD, show_default=True)
def match(term: str, kb_path: Path, table: str, threshold: float) -> None:
    """Show table terms similar to TERM, best first."""
    try:
        kb = load_kb_file(kb_path)
        if table == Table.ALLERGIES.value:
            result = find_most_similar_word_allergies(kb, term, threshold)
        else:
            result = find_most_similar_word_regular_medications_and_diseases(kb, term, threshold)
    except CounselError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    if not result.matches:
        click.echo(f"no term within threshold {threshold}", err=True)
        sys.exit(1)
    for matched, score in result.matches:
        click.echo(f"{matched} {score:.{SCORE_DECIMALS}f}")


@main.command("eval")
@_SPEC_OPT
@_KB_OPT
@click.option(
    "--scenarios",
    "scenario_dir",
    required=True,
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    help="Directory of scenario YAML files.",
)
@click.option("--json", "as_json", is_flag=True, help="Emit a JSON report instead of lines.")
def eval_cmd(spec_path: Path, kb_path: Path, scenario_dir: Path, as_json: bool) -> None:
    """Run every scenario in a directory against the scripted runtime."""
    try:
        spec = load_spec(spec_path)
        kb = load_kb_file(kb_path)
        scenarios = load_scenario_dir(scenario_dir)
        report = run_suite(spec, kb, scenarios)
    except CounselError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)

    if as_json:
        click.echo(json.dumps(
            {
                "total": report.total,
                "passed": report.passed_count,
                "duration_s": round(report.duration_s, 3),
                "results": [
                    {
                        "id": r.scenario_id,
                        "passed": r.passed,
                        "turns": r.turns,
                        "failures": list(r.failures),
                    }
                    for r in report.results
                ],
            },
            indent=2,
        ))
    else:
        for r in report.results:
            click.echo(f"{'PASS' if r.passed else 'FAIL'}  {r.scenario_id}  "
                       f"({r.turns} turns, {r.duration_s:.2f}s)")
            for failure in r.failures:
                click.echo(f"       - {failure}")
        click.echo(f"{report.passed_count}/{report.total} scenarios passed "
                   f"in {report.duration_s:.2f}s")
    if not report.all_passed:
        sys.exit(1)


@main.command()
@_SPEC_OPT
@_KB_OPT
@click.option("--db", "db_path", default="ecpcounsel.db", show_default=True,
              help="Sqlite file for session storage.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--token", envvar="ECPCOUNSEL_TOKEN", default=None,
              help="Require this bearer token on every API call.")
@click.option("--static-dir", type=click.Path(exists=True, file_okay=False, path_type=Path),
              default=None, help="Serve a built UI from this directory at /.")
@click.option("--profile", "default_profile", type=click.Choice(list(PROFILES)),
              default="standard", show_default=True,
              help="Backend profile for sessions that do not choose one.")
@click.option("--fixed-clock", "use_fixed_clock", is_flag=True,
              help="Deterministic timestamps, for demos and tests.")
def serve(
    spec_path: Path,
    kb_path: Path,
    db_path: str,
    host: str,
    port: int,
    token: str | None,
    static_dir: Path | None,
    default_profile: str,
    use_fixed_clock: bool,
) -> None:
    """Run the HTTP API."""
    import uvicorn

    from .http_api import create_app
    from .rulebook import build_backend
    from .session_service import CounselingService

    try:
        spec = load_spec(spec_path)
        kb = load_kb_file(kb_path)
    except CounselError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    service = CounselingService(
        spec,
        kb,
        db_path,
        backend_factory=lambda profile: build_backend(profile or default_profile, spec, kb),
        clock_factory=fixed_clock if use_fixed_clock else None,
    )
    app = create_app(service, api_token=token, static_dir=static_dir)
    click.echo(f"serving {spec.medication_id} on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
