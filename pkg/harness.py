"""Orchestration behind the command-line tool: construction, trials, reports and the oracle suite.

Random streams fan out from the master seed by counter: the stream for
``(role, block, trial)`` is ``SeedSequence(master, spawn_key=(role_code,
block, trial))``. A protocol run draws everything from its trial stream, so
a trial can be re-run alone and in any worker.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from capacity import (
    CapacityResult,
    biometric_rate_point,
    broadcast_capacity,
    cwsk_unlimited,
    entropy_bits,
    example1_capacity,
    model2_rate_point,
    tree_capacity,
    tri_capacity,
)
from config import ExperimentConfig
from errors import CapacityError, InvariantFailure, SpecValidationError, StructuralError
from metrics import (
    ErrorRate,
    SecrecyReport,
    encoder_closeness,
    error_rate,
    exact_protocol_distribution,
    exact_secrecy,
    plug_in_secrecy,
)
from output import write_csv, write_json
from polar_core import IndexSet
from polarization import (
    AUXILIARY_MODELS,
    IndexSetBundle,
    PolarIndexStats,
    build_index_sets,
    check_combine_bound,
    construct,
    exact_index_stats,
    predicted_bits,
    symbol_model,
)
from protocols import ProtocolReport, check_transcript, run_model
from sources import DbmsChain
from utils import validate_block_length

logger = logging.getLogger(__name__)

ROLE_CODES = {"construct": 0, "trial": 1, "oracle": 2}

CHAIN_RULE_TOLERANCE = 1e-9
COMBINE_TOLERANCE = 1e-12
COMBINE_TRIALS = 1000

RESULT_HEADER = [
    "model",
    "N",
    "k",
    "trials",
    "errors",
    "p_e",
    "p_e_low",
    "p_e_high",
    "key_rate",
    "seed_rate",
    "public_rate",
    "reclaimable_key_rate",
    "predicted_key_rate",
    "secrecy_method",
    "leakage_bits",
    "uniformity_bits",
    "warnings",
]


def stream(master: int, role: str, block: int = 0, trial: int = 0) -> np.random.Generator:
    """Independent generator for one (role, block, trial) triple"""
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(ROLE_CODES[role], block, trial)))


def _stem(config: ExperimentConfig, with_k: bool = True) -> str:
    stem = f"{config.model}_N{config.n}"
    return f"{stem}_k{config.k}" if with_k else stem


def _number(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.12g}"


# ============================================================================
# construct
# ============================================================================


class ConstructOutcome(BaseModel):
    path: Path
    summary: dict


def build_sets(config: ExperimentConfig) -> IndexSetBundle:
    return construct(
        config.source,
        config.n,
        config.model,
        config.method,
        config.samples,
        stream(config.seed, "construct"),
        config.channel,
        config.beta,
        config.delta,
        config.delta_high,
        config.delta_very_high,
    )


def cmd_construct(config: ExperimentConfig) -> ConstructOutcome:
    """Build the index sets and write them as an IndexSetBundle JSON file"""
    bundle = build_sets(config)
    path = bundle.save(config.out / f"{_stem(config, with_k=False)}_sets.json")
    logger.info("wrote %s", path)
    return ConstructOutcome(path=path, summary=bundle.summary(config.k))


def load_sets(config: ExperimentConfig, sets_path: Optional[Path]) -> IndexSetBundle:
    """The bundle at sets_path, or a fresh construction when none is given"""
    if sets_path is None:
        return build_sets(config)
    bundle = IndexSetBundle.load(sets_path)
    if bundle.model != config.model:
        raise SpecValidationError(f"{sets_path} holds {bundle.model} sets, not {config.model}")
    if bundle.n_total != config.n:
        raise StructuralError(f"{sets_path} was built for N={bundle.n_total}, not N={config.n}")
    return bundle


# ============================================================================
# run
# ============================================================================


class RunDump(BaseModel):
    """Everything needed to re-run one trial and compare against its outcome"""

    config: ExperimentConfig
    sets: IndexSetBundle
    trial: int
    report: ProtocolReport


class RunOutcome(BaseModel):
    error_rate: ErrorRate
    secrecy: SecrecyReport
    row: list[str]
    run_files: list[Path] = Field(default_factory=list)
    transcript_files: list[Path] = Field(default_factory=list)
    csv_file: Optional[Path] = None
    warnings: list[str] = Field(default_factory=list)


def run_trial(config: ExperimentConfig, sets: IndexSetBundle, trial: int) -> ProtocolReport:
    return run_model(config.model, config.source, sets, config.k, rng=stream(config.seed, "trial", trial=trial), channel=config.channel)


def run_trials(config: ExperimentConfig, sets: IndexSetBundle) -> list[ProtocolReport]:
    """All trials in trial order, across a process pool when workers > 1"""
    job = partial(run_trial, config, sets)
    trials = range(config.trials)
    if config.workers <= 1 or config.trials == 1:
        return [job(t) for t in trials]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(job, trials))


def _public_view(report: ProtocolReport) -> str:
    return "|".join([m.payload for m in report.transcript.messages] + report.eve_blocks)


def evaluate_secrecy(
    config: ExperimentConfig, sets: IndexSetBundle, reports: Sequence[ProtocolReport]
) -> tuple[SecrecyReport, list[str]]:
    """Exact leakage/uniformity when the enumeration fits, plug-in estimates otherwise"""
    warnings: list[str] = []
    if config.exact_metrics:
        try:
            dist = exact_protocol_distribution(config.model, config.source, sets, config.k, config.channel)
            return exact_secrecy(dist), warnings
        except CapacityError as exc:
            message = f"exact metrics over budget, reporting plug-in estimates: {exc.detail}"
            logger.warning(message)
            warnings.append(message)
    keys = [r.keys[r.encoder] for r in reports]
    views = [_public_view(r) for r in reports]
    return plug_in_secrecy(keys, views, reports[0].key_length), warnings


def _result_row(
    config: ExperimentConfig,
    sets: IndexSetBundle,
    reports: Sequence[ProtocolReport],
    rate: ErrorRate,
    secrecy: SecrecyReport,
    warnings: Sequence[str],
) -> list[str]:
    first = reports[0]
    return [
        config.model,
        str(config.n),
        str(config.k),
        str(rate.trials),
        str(rate.errors),
        _number(rate.rate),
        _number(rate.low),
        _number(rate.high),
        _number(first.key_rate),
        _number(first.seed_rate),
        _number(first.public_rate),
        _number(first.reclaimable_key_rate),
        _number(sets.summary(config.k)["key_rate"]),
        secrecy.method,
        _number(secrecy.leakage_bits),
        _number(secrecy.uniformity_bits),
        "; ".join(warnings),
    ]


def evaluate(config: ExperimentConfig, sets: IndexSetBundle) -> tuple[list[ProtocolReport], RunOutcome]:
    reports = run_trials(config, sets)
    rate = error_rate(sum(not r.agreement for r in reports), len(reports))
    secrecy, warnings = evaluate_secrecy(config, sets, reports)
    for report in reports:
        warnings.extend(w for w in report.warnings if w not in warnings)
    row = _result_row(config, sets, reports, rate, secrecy, warnings)
    return reports, RunOutcome(error_rate=rate, secrecy=secrecy, row=row, warnings=warnings)


def cmd_run(config: ExperimentConfig, sets_path: Optional[Path] = None, dump_transcript: bool = False) -> RunOutcome:
    """Run the configured protocol for every trial and write per-run JSON plus one CSV row"""
    sets = load_sets(config, sets_path)
    reports, outcome = evaluate(config, sets)
    stem = _stem(config)
    for trial, report in enumerate(reports):
        outcome.run_files.append(
            write_json(config.out / "runs" / f"{stem}_trial{trial:05d}.json", report.model_dump_json(indent=2))
        )
        if dump_transcript:
            dump = RunDump(config=config, sets=sets, trial=trial, report=report)
            outcome.transcript_files.append(
                write_json(config.out / "transcripts" / f"{stem}_trial{trial:05d}.json", dump.model_dump_json(indent=2))
            )
    outcome.csv_file = write_csv(config.out / f"{stem}_results.csv", RESULT_HEADER, [outcome.row])
    logger.info("P_e = %.4g over %d trials", outcome.error_rate.rate, outcome.error_rate.trials)
    return outcome


def cmd_sweep(config: ExperimentConfig, n_values: Sequence[int]) -> Path:
    """One construction and one CSV row per block length"""
    rows = []
    for n_len in n_values:
        validate_block_length(n_len)
        point = config.model_copy(update={"n": n_len})
        sets = build_sets(point)
        sets.save(point.out / f"{_stem(point, with_k=False)}_sets.json")
        _, outcome = evaluate(point, sets)
        rows.append(outcome.row)
        logger.info("N=%d: P_e = %.4g", n_len, outcome.error_rate.rate)
    return write_csv(config.out / f"{config.model}_k{config.k}_sweep.csv", RESULT_HEADER, rows)


# ============================================================================
# replay
# ============================================================================


class ReplayResult(BaseModel):
    trial: int
    keys_match: bool
    transcript_match: bool

    @property
    def identical(self) -> bool:
        return self.keys_match and self.transcript_match


def cmd_replay(dump_path: Path) -> ReplayResult:
    """Re-run a dumped trial from its config and sets and compare keys and transcript"""
    dump = RunDump.model_validate_json(Path(dump_path).read_text(encoding="utf-8"))
    again = run_trial(dump.config, dump.sets, dump.trial)
    result = ReplayResult(
        trial=dump.trial,
        keys_match=again.keys == dump.report.keys,
        transcript_match=again.transcript == dump.report.transcript,
    )
    if not result.identical:
        raise InvariantFailure(f"replay of trial {dump.trial} diverged from {dump_path}")
    return result


# ============================================================================
# capacity
# ============================================================================


def cmd_capacity(config: ExperimentConfig, public_rate: Optional[float] = None) -> CapacityResult:
    """Closed-form reference rate of the configured model and source"""
    spec, model = config.source, config.model
    if model == "model1":
        return cwsk_unlimited(spec)
    if model == "model2":
        if public_rate is not None:
            if not isinstance(spec, DbmsChain):
                raise SpecValidationError("the rate-limited closed form needs a dbms_chain source")
            return example1_capacity(spec.p, spec.q, public_rate)
        if config.channel is None:
            raise SpecValidationError("model2 needs a test channel or a public rate")
        return model2_rate_point(config.channel, spec)
    if model in ("bio-gen", "bio-zero"):
        if config.channel is None:
            raise SpecValidationError(f"{model} needs a test channel p(u|x)")
        return biometric_rate_point(config.channel, spec, zero_leakage=model == "bio-zero")
    if model == "model3-star":
        return broadcast_capacity(spec)
    if model == "model3-tri":
        return tri_capacity(spec)
    return tree_capacity(spec)


# ============================================================================
# oracle
# ============================================================================


class OracleCheck(BaseModel):
    """One invariant: passes when value <= limit"""

    name: str
    value: float
    limit: float
    detail: str = ""

    @property
    def margin(self) -> float:
        return self.limit - self.value

    @property
    def passed(self) -> bool:
        return self.value <= self.limit


class OracleReport(BaseModel):
    model: str
    n_total: int
    checks: list[OracleCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[OracleCheck]:
        return [c for c in self.checks if not c.passed]


def _conditional_entropy(config: ExperimentConfig, stats: PolarIndexStats) -> float:
    """H(target | side) of one source symbol"""
    table = symbol_model(config.source, stats.target, stats.side, config.channel).table()
    return entropy_bits(table) - entropy_bits(table.sum(axis=0))


def _exact_stats(config: ExperimentConfig, bundle: IndexSetBundle) -> dict[str, PolarIndexStats]:
    stats = {}
    for key, existing in bundle.stats.items():
        if existing.method == "exact":
            stats[key] = existing
        else:
            stats[key] = exact_index_stats(config.source, config.n, existing.side, existing.target, config.channel)
    return stats


def chain_rule_checks(config: ExperimentConfig, stats: dict[str, PolarIndexStats]) -> list[OracleCheck]:
    checks = []
    for key, s in stats.items():
        expected = s.length * _conditional_entropy(config, s)
        checks.append(
            OracleCheck(
                name=f"chain_rule[{key}]",
                value=abs(float(s.h_array().sum()) - expected),
                limit=CHAIN_RULE_TOLERANCE,
                detail=f"sum h = {s.h_array().sum():.12g}, N H = {expected:.12g}",
            )
        )
    return checks


def conditioning_checks(config: ExperimentConfig, stats: dict[str, PolarIndexStats]) -> list[OracleCheck]:
    """Per-index h given side information never exceeds h given nothing"""
    checks = []
    priors: dict[str, np.ndarray] = {}
    for key, s in stats.items():
        if not s.side:
            continue
        if s.target not in priors:
            prior_key = f"{s.target}|-"
            prior = stats.get(prior_key) or exact_index_stats(config.source, config.n, None, s.target, config.channel)
            priors[s.target] = prior.h_array()
        excess = float(np.max(s.h_array() - priors[s.target]))
        checks.append(OracleCheck(name=f"conditioning[{key}]", value=max(excess, 0.0), limit=CHAIN_RULE_TOLERANCE))
    return checks


def _inclusions(bundle: IndexSetBundle) -> list[tuple[str, IndexSet, IndexSet]]:
    """(label, subset, superset) relations the model's sets must satisfy"""
    s = bundle.sets
    model = bundle.model
    if model == "model1":
        secret = s["V_X|Z"] - s["H_X|Y"]
        return [
            ("K in V_X|Z \\ H_X|Y", s["K"], secret),
            ("A_XYZ in V_X|Z \\ H_X|Y", s["A_XYZ"], secret),
            ("K disjoint from A_XYZ", s["K"], s["A_XYZ"].complement()),
            ("F in H_X|Y", s["F"], s["H_X|Y"]),
            ("F' in H_X|Y", s["F'"], s["H_X|Y"]),
        ]
    if model in ("model2", "bio-gen", "bio-zero"):
        upper = s["V_U|Z"] if model == "model2" else s["V_U"]
        secret = upper - s["H_U|Y"] - s["V_U|X"]
        sent = s["H_U|Y"] - s["V_U|X"]
        relations = [
            ("K in secret positions", s["K"], secret),
            ("F in H_U|Y \\ V_U|X", s["F"], sent),
            ("F' in H_U|Y \\ V_U|X", s["F'"], sent),
        ]
        if model == "bio-zero":
            relations.append(("P in H_U|Y \\ V_U|X", s["P"], sent))
        else:
            a_name = "A_UYZ" if model == "model2" else "A_UXY"
            relations.append((f"{a_name} in secret positions", s[a_name], secret))
            relations.append((f"K disjoint from {a_name}", s["K"], s[a_name].complement()))
        if all(st.method == "exact" for st in bundle.stats.values()):
            relations.append(("V_U|X in H_U", s["V_U|X"], s["H_U"]))
        return relations
    if model == "model3-star":
        relations = [(f"{name} in H*", s[name], s["H*"]) for name in sorted(s) if name.startswith("H_X1|X")]
        relations.append(("K in V_X1 \\ H*", s["K"], s["V_X1"] - s["H*"]))
        return relations
    if model == "model3-tri":
        return [
            ("K_XM in V_X2 \\ H_X2|X1", s["K_XM"], s["V_X2"] - s["H_X2|X1"]),
            ("Kbar in H_X2|X3", s["Kbar"], s["H_X2|X3"]),
            ("F_XM in F21 \\ F23", s["F_XM"], s["F21"] - s["F23"]),
        ]
    plan = bundle.plan
    top = s[f"H_X{plan.root}|X{plan.partner}"]
    relations = []
    for vertex, kids in plan.children.items():
        widest = s[f"H_X{vertex}|X{plan.star_child[vertex]}"]
        for child in kids:
            relations.append((f"H_X{vertex}|X{child} in H_X{vertex}|X{plan.star_child[vertex]}", s[f"H_X{vertex}|X{child}"], widest))
        relations.append((f"H_X{vertex}|X{plan.star_child[vertex]} in H_X{plan.root}|X{plan.partner}", widest, top))
    return relations


def inclusion_checks(bundle: IndexSetBundle) -> list[OracleCheck]:
    checks = []
    for label, subset, superset in _inclusions(bundle):
        outside = subset - superset
        checks.append(
            OracleCheck(
                name=f"inclusion[{label}]",
                value=len(outside),
                limit=0,
                detail=f"outside: {outside.indices}" if len(outside) else "",
            )
        )
    return checks


def consistency_check(config: ExperimentConfig, bundle: IndexSetBundle) -> OracleCheck:
    """The stored sets are what thresholding the stored statistics gives"""
    rebuilt = build_index_sets(
        bundle.stats,
        bundle.model,
        bundle.source or config.source,
        bundle.beta,
        None,
        bundle.delta_high,
        bundle.delta_very_high,
        bundle.channel or config.channel,
    )
    differing = sorted(name for name in rebuilt.sets if bundle.sets.get(name) != rebuilt.sets[name])
    return OracleCheck(name="sets_match_stats", value=len(differing), limit=0, detail=", ".join(differing))


def combine_check(config: ExperimentConfig) -> OracleCheck:
    report = check_combine_bound(trials=COMBINE_TRIALS, rng=stream(config.seed, "oracle", block=1))
    return OracleCheck(
        name="bhattacharyya_combine",
        value=-report.min_margin,
        limit=COMBINE_TOLERANCE,
        detail=f"{len(report.cases)} random joints",
    )


def block_bound_checks(config: ExperimentConfig, bundle: IndexSetBundle) -> list[OracleCheck]:
    """Single-block uniformity and leakage of the key plus next seed"""
    dist = exact_protocol_distribution("model1", config.source, bundle, 1)
    delta = max(bundle.delta_high, bundle.delta_very_high)
    secret = ["K1", "S1"]
    view = ["M", "Z"] if config.source.eve else ["M"]
    n_len = bundle.n_total
    return [
        OracleCheck(name="block_uniformity", value=dist.uniformity(secret), limit=n_len * delta),
        OracleCheck(name="block_leakage", value=dist.mutual_information(secret, view), limit=2 * n_len * delta),
    ]


def encoder_checks(config: ExperimentConfig, bundle: IndexSetBundle) -> list[OracleCheck]:
    closeness = encoder_closeness(config.source, bundle, config.channel)
    return [
        OracleCheck(name="encoder_divergence", value=closeness.divergence, limit=closeness.divergence_bound),
        OracleCheck(name="encoder_variational", value=closeness.variational, limit=closeness.variational_bound),
    ]


def rate_checks(config: ExperimentConfig, bundle: IndexSetBundle) -> list[OracleCheck]:
    """Set-size identities plus one run whose sizes must match the prediction"""
    s = {name: len(v) for name, v in bundle.sets.items()}
    k = config.k
    key_bits, seed_bits, public_bits = predicted_bits(bundle, k)
    checks = []
    if bundle.model == "model1":
        expected = k * (s["V_X|Z"] - s["H_X|Y"])
        checks.append(OracleCheck(name="key_bits_identity", value=abs(key_bits - expected), limit=0))
    if bundle.model == "model2":
        expected = s["V_U|X"] + k * len(bundle["H_U|Y"] - bundle["V_U|X"])
        checks.append(OracleCheck(name="public_bits_identity", value=abs(public_bits - expected), limit=0))
    if bundle.model == "model3-tri":
        checks.append(OracleCheck(name="xor_mask_sizes", value=abs(s["F_XM"] - s["Kbar"]), limit=0))
    if bundle.model in ("model1", "model2", "bio-gen"):
        doubled = predicted_bits(bundle, 2 * k)[1] / (2 * k * bundle.n_total)
        single = seed_bits / (k * bundle.n_total)
        checks.append(OracleCheck(name="seed_rate_halves", value=abs(2 * doubled - single), limit=1e-15))

    report = run_model(bundle.model, config.source, bundle, k, rng=stream(config.seed, "oracle", block=2), channel=config.channel)
    mismatch = abs(report.key_length - key_bits) + abs(report.transcript.total_bits - public_bits)
    mismatch += abs(report.seed_bits - seed_bits)
    checks.append(OracleCheck(name="run_matches_prediction", value=mismatch, limit=0))
    checks.append(OracleCheck(name="transcript_lengths", value=0 if check_transcript(report, bundle) else 1, limit=0))
    return checks


def cmd_oracle(config: ExperimentConfig, sets_path: Optional[Path] = None) -> OracleReport:
    """Exact small-N verification suite; raises InvariantFailure listing every failed check"""
    bundle = load_sets(config, sets_path) if sets_path else build_sets(config.model_copy(update={"method": "exact"}))
    report = OracleReport(model=bundle.model, n_total=bundle.n_total)
    stats = _exact_stats(config, bundle)
    report.checks.extend(chain_rule_checks(config, stats))
    report.checks.extend(conditioning_checks(config, stats))
    report.checks.append(consistency_check(config, bundle))
    report.checks.extend(inclusion_checks(bundle))
    report.checks.append(combine_check(config))
    if bundle.model == "model1":
        report.checks.extend(block_bound_checks(config, bundle))
    if bundle.model in AUXILIARY_MODELS:
        report.checks.extend(encoder_checks(config, bundle))
    report.checks.extend(rate_checks(config, bundle))
    for check in report.checks:
        logger.debug("%s: value %.3g, limit %.3g", check.name, check.value, check.limit)
    return report


def require_pass(report: OracleReport) -> OracleReport:
    failed = report.failures()
    if failed:
        names = ", ".join(c.name for c in failed)
        raise InvariantFailure(f"{len(failed)} oracle check(s) failed: {names}")
    return report
