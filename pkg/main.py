"""polarkey command-line tool.

    python main.py construct --config experiment.json
    python main.py run --config experiment.json --sets out/model1_N8_sets.json --trials 100
    python main.py oracle --model model1 --source dbms.json --n 4
    python main.py capacity --model model2 --source dbms.json --public-rate 0.3
    python main.py replay out/transcripts/model1_N8_k1_trial00000.json
"""

from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Iterator, Optional

import typer
from rich.table import Table

import harness
from config import LOG_LEVEL, ExperimentConfig, build_config
from errors import EXIT_INVARIANT, PolarKeyError
from output import console, log_error, log_info, log_success, log_warning, output_json, setup_logging
from sources import TestChannel

app = typer.Typer(name="polarkey", help="Polar-coding secret-key generation experiments", no_args_is_help=True)

ConfigOpt = Annotated[Optional[Path], typer.Option("--config", help="JSON file mirroring ExperimentConfig")]
SourceOpt = Annotated[Optional[Path], typer.Option("--source", help="JSON source specification")]
ModelOpt = Annotated[
    Optional[str],
    typer.Option("--model", help="model1, model2, model3-star, model3-tri, model4, bio-gen or bio-zero"),
]
NOpt = Annotated[Optional[int], typer.Option("--n", help="Block length N (power of 2)")]
KOpt = Annotated[Optional[int], typer.Option("--k", help="Number of chained blocks")]
BetaOpt = Annotated[Optional[float], typer.Option("--beta", help="Threshold exponent, delta_N = 2^(-N^beta)")]
DeltaOpt = Annotated[Optional[float], typer.Option("--delta", help="Explicit threshold overriding delta_N")]
MethodOpt = Annotated[Optional[str], typer.Option("--method", help="Construction method: exact or mc")]
SamplesOpt = Annotated[Optional[int], typer.Option("--samples", help="Monte-Carlo samples per context")]
TrialsOpt = Annotated[Optional[int], typer.Option("--trials", help="Independent protocol runs")]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="Master seed")]
OutOpt = Annotated[Optional[Path], typer.Option("--out", help="Output directory (default: $POLARKEY_OUTPUT_DIR)")]
ChannelOpt = Annotated[Optional[float], typer.Option("--channel-bsc", help="BSC(beta) test channel p(u|x)")]
SetsOpt = Annotated[Optional[Path], typer.Option("--sets", help="IndexSetBundle JSON from `construct`")]
JsonOpt = Annotated[bool, typer.Option("--json", help="Print machine-readable JSON")]


@app.callback()
def main(
    log_level: Annotated[str, typer.Option("--log-level", help="Logging level")] = LOG_LEVEL,
) -> None:
    setup_logging(log_level)


@contextmanager
def _handled(json_output: bool = False) -> Iterator[None]:
    """Turn library errors into a message (or a JSON error document) and the error's exit code"""
    try:
        yield
    except PolarKeyError as exc:
        if json_output:
            output_json(exc.to_dict())
        else:
            log_error(exc.detail)
        raise typer.Exit(code=exc.exit_code)


def _config(
    config: Optional[Path],
    source: Optional[Path],
    channel_bsc: Optional[float] = None,
    **overrides,
) -> ExperimentConfig:
    channel = TestChannel.bsc(channel_bsc).model_dump() if channel_bsc is not None else None
    return build_config(config_path=config, source_path=source, channel=channel, **overrides)


def _print_summary(summary: dict) -> None:
    table = Table(title=f"{summary['model']} index sets, N={summary['N']}, k={summary['k']}")
    table.add_column("set")
    table.add_column("size", justify="right")
    for name, size in summary["set_sizes"].items():
        table.add_row(name, str(size))
    console.print(table)
    console.print(
        f"key bits {summary['key_bits']} (rate {summary['key_rate']:.4f}), "
        f"seed bits {summary['seed_bits']} (rate {summary['seed_rate']:.4f}), "
        f"public bits {summary['public_bits']} (rate {summary['public_rate']:.4f})"
    )
    for context, bound in summary["sc_error_bound"].items():
        console.print(f"SC error bound [{context}]: {bound:.3e}")


@app.command()
def construct(
    config: ConfigOpt = None,
    source: SourceOpt = None,
    model: ModelOpt = None,
    n: NOpt = None,
    k: KOpt = None,
    beta: BetaOpt = None,
    delta: DeltaOpt = None,
    method: MethodOpt = None,
    samples: SamplesOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
    channel_bsc: ChannelOpt = None,
    json_output: JsonOpt = False,
):
    """Build the index sets and write them to a sets file."""
    with _handled(json_output):
        cfg = _config(
            config, source, channel_bsc,
            model=model, n=n, k=k, beta=beta, delta=delta, method=method, samples=samples, seed=seed, out=out,
        )
        outcome = harness.cmd_construct(cfg)
        if json_output:
            output_json({"path": str(outcome.path), **outcome.summary})
        else:
            _print_summary(outcome.summary)
            log_success(f"Sets written to {outcome.path}")


@app.command()
def run(
    config: ConfigOpt = None,
    source: SourceOpt = None,
    model: ModelOpt = None,
    n: NOpt = None,
    k: KOpt = None,
    beta: BetaOpt = None,
    delta: DeltaOpt = None,
    method: MethodOpt = None,
    samples: SamplesOpt = None,
    trials: TrialsOpt = None,
    seed: SeedOpt = None,
    out: OutOpt = None,
    channel_bsc: ChannelOpt = None,
    sets: SetsOpt = None,
    workers: Annotated[Optional[int], typer.Option("--workers", help="Worker processes for trials")] = None,
    dump_transcript: Annotated[bool, typer.Option("--dump-transcript", help="Write replayable transcripts")] = False,
    no_exact_metrics: Annotated[bool, typer.Option("--no-exact-metrics", help="Always use plug-in secrecy")] = False,
    sweep: Annotated[
        Optional[list[int]],
        typer.Option("--sweep", help="Block lengths to sweep over (repeatable); constructs sets per N"),
    ] = None,
    json_output: JsonOpt = False,
):
    """Run the protocol for every trial and write reports and a results CSV."""
    with _handled(json_output):
        cfg = _config(
            config, source, channel_bsc,
            model=model, n=n, k=k, beta=beta, delta=delta, method=method, samples=samples, trials=trials,
            seed=seed, out=out, workers=workers, exact_metrics=False if no_exact_metrics else None,
        )
        if sweep:
            path = harness.cmd_sweep(cfg, sweep)
            log_success(f"Sweep results written to {path}")
            return
        outcome = harness.cmd_run(cfg, sets, dump_transcript)
        for warning in outcome.warnings:
            log_warning(warning)
        if json_output:
            output_json(outcome.model_dump(mode="json"))
            return
        rate = outcome.error_rate
        console.print(f"P_e = {rate.rate:.4g}  (95% CI {rate.low:.4g} .. {rate.high:.4g}, {rate.errors}/{rate.trials})")
        console.print(
            f"leakage {outcome.secrecy.leakage_bits:.3e} bits, "
            f"non-uniformity {outcome.secrecy.uniformity_bits:.3e} bits ({outcome.secrecy.method})"
        )
        log_success(f"Results written to {outcome.csv_file}")


@app.command()
def capacity(
    config: ConfigOpt = None,
    source: SourceOpt = None,
    model: ModelOpt = None,
    channel_bsc: ChannelOpt = None,
    public_rate: Annotated[
        Optional[float], typer.Option("--public-rate", help="Public rate limit (model2 with a dbms_chain source)")
    ] = None,
):
    """Print the closed-form reference rate of a model and source."""
    with _handled(json_output=True):
        cfg = _config(config, source, channel_bsc, model=model)
        result = harness.cmd_capacity(cfg, public_rate)
        for warning in result.warnings:
            log_warning(warning)
        output_json(result.model_dump(mode="json"))


@app.command()
def oracle(
    config: ConfigOpt = None,
    source: SourceOpt = None,
    model: ModelOpt = None,
    n: NOpt = None,
    k: KOpt = None,
    beta: BetaOpt = None,
    delta: DeltaOpt = None,
    seed: SeedOpt = None,
    channel_bsc: ChannelOpt = None,
    sets: SetsOpt = None,
    json_output: JsonOpt = False,
):
    """Run the exact small-N verification suite (N=4 unless configured); exits nonzero if any check fails."""
    if n is None and config is None:
        n = 4
    with _handled(json_output):
        cfg = _config(config, source, channel_bsc, model=model, n=n, k=k, beta=beta, delta=delta, seed=seed)
        report = harness.cmd_oracle(cfg, sets)
        if json_output:
            output_json(
                {
                    "model": report.model,
                    "N": report.n_total,
                    "passed": report.passed,
                    "checks": [{**c.model_dump(), "margin": c.margin, "passed": c.passed} for c in report.checks],
                }
            )
            if not report.passed:
                raise typer.Exit(code=EXIT_INVARIANT)
        else:
            table = Table(title=f"oracle: {report.model}, N={report.n_total}")
            for column in ("check", "value", "limit", "margin", ""):
                table.add_column(column)
            for c in report.checks:
                mark = "[green]pass[/green]" if c.passed else "[red]FAIL[/red]"
                table.add_row(c.name, f"{c.value:.3e}", f"{c.limit:.3e}", f"{c.margin:.3e}", mark)
            console.print(table)
        harness.require_pass(report)
        log_success(f"All {len(report.checks)} checks passed")


@app.command()
def replay(
    transcript: Annotated[Path, typer.Argument(help="Transcript file written by `run --dump-transcript`")],
):
    """Re-run a dumped trial and confirm identical keys and transcript."""
    with _handled():
        log_info(f"Replaying {transcript}")
        result = harness.cmd_replay(transcript)
        log_success(f"Trial {result.trial} reproduced identical keys and transcript")


if __name__ == "__main__":
    app()
