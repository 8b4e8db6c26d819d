"""Command-line entry points: ingest | query | profile | compact | eval | serve.

Exit codes: 0 success, 2 configuration/input problems, 3 provider failures.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import EngineConfig
from .errors import InvalidArgument, MemtriadError, ProviderError
from .evaluation import (
    MODE_DIRECT_RAG,
    MODE_OMEM,
    adapt_benchmark_release,
    corpus_from_dict,
    run_eval,
)
from .service import MemoryService, parse_channels

EXIT_CONFIG = 2
EXIT_PROVIDER = 3


def _load_config(path: str | None) -> EngineConfig:
    try:
        if path:
            return EngineConfig.from_file(path)
        return EngineConfig.from_dict({})
    except InvalidArgument as exc:
        raise click.exceptions.Exit(_fail(EXIT_CONFIG, f"bad config: {exc}"))


def _fail(code: int, message: str) -> int:
    click.echo(message, err=True)
    return code


def _echo_json(doc) -> None:
    click.echo(json.dumps(doc, indent=2, ensure_ascii=False))


@click.group()
@click.option(
    "--config",
    "config_path",
    type=click.Path(),
    envvar="MEMTRIAD_CONFIG",
    default=None,
    help="Engine config JSON (defaults apply when omitted).",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Long-term conversational memory engine."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = _load_config(config_path)


def _service(ctx: click.Context) -> MemoryService:
    return MemoryService(ctx.obj["config"])


@main.command()
@click.argument("user_id")
@click.argument("text")
@click.option("--role", type=click.Choice(["user", "assistant"]), default="user")
@click.option("--session", "session_id", default=None)
@click.pass_context
def ingest(ctx, user_id: str, text: str, role: str, session_id: str | None) -> None:
    """Encode one turn into USER_ID's memory."""
    try:
        result = _service(ctx).ingest(user_id, text, role=role, session_id=session_id)
    except ProviderError as exc:
        raise click.exceptions.Exit(_fail(EXIT_PROVIDER, f"provider failure: {exc}"))
    _echo_json(result)


@main.command()
@click.argument("user_id")
@click.argument("text")
@click.option("--channels", default=None, help="Comma list: wm,em,pm or full names.")
@click.option("--budget", "max_tokens", type=int, default=None)
@click.option("--respond/--no-respond", default=False)
@click.pass_context
def query(ctx, user_id, text, channels, max_tokens, respond) -> None:
    """Retrieve (and optionally answer) against USER_ID's memory."""
    try:
        result = _service(ctx).query(
            user_id, text, channels=channels, max_tokens=max_tokens, respond=respond
        )
    except ProviderError as exc:
        raise click.exceptions.Exit(_fail(EXIT_PROVIDER, f"provider failure: {exc}"))
    except MemtriadError as exc:
        raise click.exceptions.Exit(_fail(EXIT_CONFIG, str(exc)))
    _echo_json(result)


@main.command()
@click.argument("user_id")
@click.pass_context
def profile(ctx, user_id: str) -> None:
    """Dump USER_ID's persona facts and attributes."""
    try:
        _echo_json(_service(ctx).profile(user_id))
    except MemtriadError as exc:
        raise click.exceptions.Exit(_fail(EXIT_CONFIG, str(exc)))


@main.command()
@click.argument("user_id")
@click.pass_context
def compact(ctx, user_id: str) -> None:
    """Consolidate USER_ID's near-duplicate persona attributes now."""
    try:
        _echo_json(_service(ctx).compact(user_id))
    except ProviderError as exc:
        raise click.exceptions.Exit(_fail(EXIT_PROVIDER, f"provider failure: {exc}"))
    except MemtriadError as exc:
        raise click.exceptions.Exit(_fail(EXIT_CONFIG, str(exc)))


@main.command(name="eval")
@click.option("--corpus", "corpus_path", type=click.Path(), required=True)
@click.option("--mode", type=click.Choice([MODE_OMEM, MODE_DIRECT_RAG]), default=MODE_OMEM)
@click.option("--channels", default=None, help="Comma list: wm,em,pm or full names.")
@click.option("--budget", "max_tokens", type=int, default=None)
@click.option("--output", "output_path", type=click.Path(), default=None)
@click.option(
    "--benchmark-release",
    is_flag=True,
    help="Corpus file uses the public benchmark release schema.",
)
@click.pass_context
def eval_cmd(ctx, corpus_path, mode, channels, max_tokens, output_path, benchmark_release):
    """Run the QA evaluation harness over a conversation corpus."""
    config: EngineConfig = ctx.obj["config"]
    path = Path(corpus_path)
    if not path.exists():
        raise click.exceptions.Exit(_fail(EXIT_CONFIG, f"corpus file not found: {path}"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        corpus = adapt_benchmark_release(doc) if benchmark_release else corpus_from_dict(doc)
    except (json.JSONDecodeError, KeyError, InvalidArgument) as exc:
        raise click.exceptions.Exit(_fail(EXIT_CONFIG, f"cannot load corpus {path}: {exc}"))
    try:
        report = run_eval(
            corpus,
            config.build_providers(),
            mode=mode,
            channels=parse_channels(channels),
            budget=config.budget(max_tokens),
            settings=config.settings(),
        )
    except ProviderError as exc:
        raise click.exceptions.Exit(_fail(EXIT_PROVIDER, f"provider failure: {exc}"))
    click.echo(report.format_table())
    if output_path:
        with open(output_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, ensure_ascii=False)
        click.echo(f"report written to {output_path}")


@main.command()
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
@click.pass_context
def serve(ctx, host: str | None, port: int | None) -> None:
    """Run the HTTP service."""
    from .service import serve as serve_app

    config: EngineConfig = ctx.obj["config"]
    if host:
        config.host = host
    if port:
        config.port = port
    serve_app(config)


if __name__ == "__main__":
    main()
