"""Command line client.

Experiment subcommands build an experiment spec from flags and POST it
to the service: a remote one with ``--server URL`` or an in-process app
otherwise. ``convert`` is a local file conversion.
"""

from __future__ import annotations

import asyncio
import sys
from pathlib import Path

import click
import httpx
from pydantic import ValidationError

from .harness import render_report
from .mmio import read_bag_of_words, write_matrix_market
from .schemas import ExperimentSpec, Report, SyntheticRecipe

DEFAULT_RECIPES = {
    "ridge": SyntheticRecipe(kind="rank_k", n=700, d=900, rank=20),
    "lra": SyntheticRecipe(kind="decay", n=200, d=150, power=2.0),
    "query": SyntheticRecipe(kind="decay", n=1000, d=200, power=1.0),
    "bench": SyntheticRecipe(kind="decay", n=1000, d=200, power=1.0),
}


async def _post_async(payload: dict, server: str | None) -> httpx.Response:
    if server:
        transport, base = None, server
    else:
        from .service import create_app

        transport, base = httpx.ASGITransport(app=create_app()), "http://dynsketch"
    async with httpx.AsyncClient(transport=transport, base_url=base, timeout=None) as client:
        return await client.post("/experiments", json=payload)


def _post(spec: ExperimentSpec, server: str | None) -> Report:
    try:
        resp = asyncio.run(_post_async(spec.model_dump(mode="json"), server))
    except httpx.HTTPError as exc:
        raise click.ClickException(f"cannot reach service: {exc}") from exc
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise click.ClickException(f"service returned {resp.status_code}: {detail}")
    return Report.model_validate(resp.json())


def common(f):
    opts = [
        click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="MatrixMarket coordinate file; a synthetic instance is used when absent."),
        click.option("--n", "n", type=int, default=None, help="Synthetic rows."),
        click.option("--d", "d", type=int, default=None, help="Synthetic columns."),
        click.option("--synthetic-rank", type=int, default=None, help="Rank of the synthetic instance."),
        click.option("--decay", type=float, default=None, help="Use sigma_i = 1/i**DECAY for the synthetic instance."),
        click.option("--noise", type=float, default=0.0, show_default=True),
        click.option("--rows", "-r", type=int, default=None, help="Sampled rows (overrides the formula)."),
        click.option("--cols", "-c", type=int, default=None, help="Sampled columns (overrides the formula)."),
        click.option("--rank", "-k", "k", type=int, multiple=True, help="Target rank; repeat to sweep."),
        click.option("--epsilon", type=float, default=None),
        click.option("--lambda", "lam", type=float, default=1.0, show_default=True),
        click.option("--trials", type=int, default=10, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--output", type=click.Path(dir_okay=False), default=None, help="Write the report here."),
        click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True),
        click.option("--server", default=None, help="Base URL of a running service."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _spec(task: str, kw: dict, **extra) -> ExperimentSpec:
    try:
        return _build_spec(task, kw, **extra)
    except ValidationError as exc:
        msgs = "; ".join(e["msg"] for e in exc.errors())
        raise click.UsageError(msgs) from exc


def _build_spec(task: str, kw: dict, **extra) -> ExperimentSpec:
    recipe = None
    if kw["input_path"] is None:
        base = DEFAULT_RECIPES[task]
        upd = {k: v for k, v in (("n", kw["n"]), ("d", kw["d"]), ("rank", kw["synthetic_rank"])) if v}
        if base.rank and "rank" not in upd:
            # shrinking n or d should not leave the default rank out of range
            upd["rank"] = min(base.rank, upd.get("n", base.n), upd.get("d", base.d))
        if kw["decay"] is not None:
            upd.update(kind="decay", power=kw["decay"])
        upd["noise"] = kw["noise"]
        recipe = SyntheticRecipe.model_validate({**base.model_dump(), **upd})
    ks = list(kw["k"])
    fields = dict(
        task=task, input_path=kw["input_path"], synthetic=recipe, rows=kw["rows"], cols=kw["cols"],
        lam=kw["lam"], trials=kw["trials"], seed=kw["seed"], **extra,
    )
    if kw["epsilon"] is not None:
        fields["epsilon"] = kw["epsilon"]
    if ks:
        fields["k"] = ks[0]
        if len(ks) > 1:
            fields["ks"] = ks
    return ExperimentSpec(**fields)


def _emit(report: Report, output: str | None, fmt: str) -> None:
    text = render_report(report, fmt)
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@click.group()
def main():
    """Dynamic sketching experiments: ridge regression and low-rank sampling."""


@main.command()
@common
@click.option("--b-noise", type=float, default=0.0, show_default=True, help="Relative noise added to B = A x0.")
def ridge(b_noise, **kw):
    """Sketched ridge regression against the closed-form solution."""
    spec = _spec("ridge", kw, b_noise=b_noise)
    _emit(_post(spec, kw["server"]), kw["output"], kw["fmt"])


@main.command()
@common
@click.option("--estimate/--oracle", default=False, help="Estimate tau and sigma_k instead of using the SVD.")
def lra(estimate, **kw):
    """Low-rank factors and the relative error metric."""
    spec = _spec("lra", kw, use_oracle=not estimate)
    _emit(_post(spec, kw["server"]), kw["output"], kw["fmt"])


@main.command()
@common
@click.option("--queries", type=int, default=1000, show_default=True)
@click.option("--tv-columns", type=int, default=10, show_default=True)
@click.option("--tv-draws", type=int, default=10_000, show_default=True)
def query(queries, tv_columns, tv_draws, **kw):
    """Column-conditional row sampling latency, trials and TV distance."""
    spec = _spec("query", kw, queries=queries, tv_columns=tv_columns, tv_draws=tv_draws)
    _emit(_post(spec, kw["server"]), kw["output"], kw["fmt"])


@main.command()
@common
@click.option("--ns", type=int, multiple=True, help="Row counts to scale over (default 1000 and 4000).")
@click.option("--queries", type=int, default=1000, show_default=True)
def bench(ns, queries, **kw):
    """Query latency as the number of rows grows."""
    if kw["input_path"]:
        raise click.UsageError("bench runs on synthetic instances only")
    spec = _spec("bench", kw, bench_ns=list(ns) or None, queries=queries, tv_columns=0)
    _emit(_post(spec, kw["server"]), kw["output"], kw["fmt"])


@main.command()
@click.option("--input", "input_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--output", type=click.Path(dir_okay=False), required=True)
def convert(input_path, output):
    """Convert a UCI bag-of-words docword file to MatrixMarket."""
    m = read_bag_of_words(input_path)
    write_matrix_market(m, output)
    click.echo(f"wrote {m.n_rows}x{m.n_cols} matrix with {m.nnz} entries to {output}", err=True)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("dynsketch.service:app", host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
