import json

import numpy as np
import pytest

import harness
from capacity import hb
from config import ExperimentConfig
from errors import InvariantFailure, SpecValidationError, StructuralError
from metrics import error_rate
from output import read_csv
from polarization import IndexSetBundle
from protocols import Message
from sources import BroadcastStar, DbmsChain, MarkovTree, TestChannel, TreeEdge

TREE4 = MarkovTree(m=4, edges=[TreeEdge(i=1, j=2, p=0.1), TreeEdge(i=3, j=2, p=0.3), TreeEdge(i=2, j=4, p=0.2)])

ORACLE_CASES = {
    "model1": (DbmsChain(p=0.05, q=0.5), None),
    "model2": (DbmsChain(p=0.05, q=0.5), TestChannel.bsc(0.1)),
    "bio-gen": (DbmsChain(p=0.05, z_present=False), TestChannel.bsc(0.1)),
    "bio-zero": (DbmsChain(p=0.05, z_present=False), TestChannel.bsc(0.1)),
    "model3-star": (BroadcastStar(crossovers=[0.05, 0.1]), None),
    "model3-tri": (MarkovTree(m=3, edges=[TreeEdge(i=1, j=2, p=0.2), TreeEdge(i=2, j=3, p=0.1)]), None),
    "model4": (TREE4, None),
}


@pytest.fixture
def make_config(tmp_path):
    def factory(model: str, source, **overrides) -> ExperimentConfig:
        overrides.setdefault("n", 4)
        return ExperimentConfig(model=model, source=source, out=tmp_path, **overrides)

    return factory


def test_streams_are_reproducible_and_distinct():
    a = harness.stream(7, "trial", trial=1).integers(0, 2**32, 4)
    b = harness.stream(7, "trial", trial=1).integers(0, 2**32, 4)
    c = harness.stream(7, "trial", trial=2).integers(0, 2**32, 4)
    d = harness.stream(7, "construct").integers(0, 2**32, 4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_construct_writes_a_loadable_bundle(make_config):
    config = make_config("model4", TREE4)
    outcome = harness.cmd_construct(config)
    assert outcome.path.name == "model4_N4_sets.json"
    assert outcome.summary["N"] == 4
    bundle = harness.load_sets(config, outcome.path)
    assert bundle == IndexSetBundle.load(outcome.path)


def test_mc_construction_is_seeded(make_config, tmp_path):
    spec = DbmsChain(p=0.1, q=0.5)
    first = harness.build_sets(make_config("model1", spec, method="mc", samples=2000, seed=3))
    again = harness.build_sets(make_config("model1", spec, method="mc", samples=2000, seed=3))
    other = harness.build_sets(make_config("model1", spec, method="mc", samples=2000, seed=4))
    assert first == again
    assert first.stats["X1|X2"].h_cond != other.stats["X1|X2"].h_cond


def test_load_sets_rejects_mismatched_bundles(make_config):
    path = harness.cmd_construct(make_config("model4", TREE4)).path
    with pytest.raises(SpecValidationError):
        harness.load_sets(make_config("model3-tri", ORACLE_CASES["model3-tri"][0]), path)
    with pytest.raises(StructuralError):
        harness.load_sets(make_config("model4", TREE4, n=8), path)


def test_run_writes_reports_and_csv(make_config):
    config = make_config("model4", TREE4, trials=3)
    outcome = harness.cmd_run(config)
    assert len(outcome.run_files) == 3
    assert all(path.exists() for path in outcome.run_files)
    assert outcome.csv_file.name == "model4_N4_k1_results.csv"
    header, rows = read_csv(outcome.csv_file)
    assert header == harness.RESULT_HEADER
    assert len(rows) == 1 and rows[0][0] == "model4"
    assert outcome.error_rate.trials == 3
    assert outcome.secrecy.method == "exact"
    assert outcome.secrecy.leakage_bits <= 1e-10
    assert outcome.secrecy.uniformity_bits <= 1e-10


def test_run_from_a_sets_file(make_config):
    config = make_config("model3-star", ORACLE_CASES["model3-star"][0], trials=2)
    path = harness.cmd_construct(config).path
    outcome = harness.cmd_run(config, sets_path=path)
    assert outcome.error_rate.trials == 2


def test_secrecy_falls_back_to_plug_in(make_config):
    config = make_config("model1", DbmsChain(p=0.05, q=0.5), n=8, k=2, trials=2)
    sets = harness.build_sets(config)
    reports = harness.run_trials(config, sets)
    secrecy, warnings = harness.evaluate_secrecy(config, sets, reports)
    assert secrecy.method == "plugin"
    assert secrecy.trials == 2
    assert warnings and "plug-in" in warnings[0]
    no_exact = config.model_copy(update={"exact_metrics": False})
    secrecy, warnings = harness.evaluate_secrecy(no_exact, sets, reports)
    assert secrecy.method == "plugin" and not warnings


def test_replay_reproduces_a_dumped_trial(make_config):
    config = make_config("model1", DbmsChain(p=0.05, q=0.5), k=2, trials=2, seed=11)
    outcome = harness.cmd_run(config, dump_transcript=True)
    assert len(outcome.transcript_files) == 2
    result = harness.cmd_replay(outcome.transcript_files[1])
    assert result.trial == 1
    assert result.identical


def test_replay_detects_a_tampered_transcript(make_config, tmp_path):
    config = make_config("model4", TREE4)
    outcome = harness.cmd_run(config, dump_transcript=True)
    dump = harness.RunDump.model_validate_json(outcome.transcript_files[0].read_text())
    dump.report.transcript.messages.append(Message(block=9, sender=1, label="F", length=0, payload=""))
    tampered = tmp_path / "tampered.json"
    tampered.write_text(dump.model_dump_json())
    with pytest.raises(InvariantFailure) as info:
        harness.cmd_replay(tampered)
    assert info.value.exit_code == 5


def test_capacity_dispatch(make_config):
    dbms = DbmsChain(p=0.1, q=0.1)
    assert harness.cmd_capacity(make_config("model1", dbms)).value == pytest.approx(hb(0.18) - hb(0.1))
    assert harness.cmd_capacity(make_config("model2", dbms), public_rate=0.5).value == pytest.approx(0.2111, abs=1e-4)
    with pytest.raises(SpecValidationError):
        harness.cmd_capacity(make_config("model2", dbms))
    with pytest.raises(SpecValidationError):
        harness.cmd_capacity(make_config("model2", ORACLE_CASES["model3-star"][0], channel=None), public_rate=0.2)
    star = harness.cmd_capacity(make_config("model3-star", ORACLE_CASES["model3-star"][0]))
    assert star.auxiliary["i_min"] == 3
    tree = harness.cmd_capacity(make_config("model4", TREE4))
    assert tree.value > 0


@pytest.mark.parametrize("model", sorted(ORACLE_CASES))
def test_oracle_passes_on_exact_small_blocks(make_config, model):
    spec, channel = ORACLE_CASES[model]
    report = harness.cmd_oracle(make_config(model, spec, channel=channel, k=2))
    assert report.n_total == 4
    assert report.passed, [(c.name, c.value, c.limit) for c in report.failures()]
    names = {c.name for c in report.checks}
    assert "bhattacharyya_combine" in names
    assert "run_matches_prediction" in names
    assert harness.require_pass(report) is report


def test_oracle_flags_a_corrupted_sets_file(make_config):
    config = make_config("model1", DbmsChain(p=0.05, q=0.5))
    path = harness.cmd_construct(config).path
    data = json.loads(path.read_text())
    original = data["sets"]["K"]["indices"]
    data["sets"]["K"]["indices"] = [] if original else [1]
    path.write_text(json.dumps(data))
    report = harness.cmd_oracle(config, path)
    failed = {c.name for c in report.failures()}
    assert "sets_match_stats" in failed
    with pytest.raises(InvariantFailure):
        harness.require_pass(report)


def test_oracle_check_margins():
    check = harness.OracleCheck(name="x", value=0.25, limit=1.0)
    assert check.passed and check.margin == pytest.approx(0.75)
    assert not harness.OracleCheck(name="y", value=2.0, limit=1.0).passed


@pytest.mark.slow
def test_worker_pool_matches_serial_runs(make_config):
    serial = make_config("model1", DbmsChain(p=0.05, q=0.5), trials=4, workers=1)
    pooled = serial.model_copy(update={"workers": 2})
    sets = harness.build_sets(serial)
    a = harness.run_trials(serial, sets)
    b = harness.run_trials(pooled, sets)
    assert [r.keys for r in a] == [r.keys for r in b]


@pytest.mark.slow
def test_sweep_writes_one_row_per_block_length(make_config, tmp_path):
    config = make_config("model4", TREE4, trials=5)
    path = harness.cmd_sweep(config, [2, 4, 8])
    assert path.name == "model4_k1_sweep.csv"
    _, rows = read_csv(path)
    assert [row[1] for row in rows] == ["2", "4", "8"]
    assert (tmp_path / "model4_N8_sets.json").exists()


@pytest.mark.slow
def test_sweep_error_rate_does_not_grow_with_block_length(make_config):
    config = make_config(
        "model1",
        DbmsChain(p=0.05, q=0.5),
        method="mc",
        samples=5000,
        delta_high=1e-6,
        trials=500,
        exact_metrics=False,
    )
    header, rows = read_csv(harness.cmd_sweep(config, [256, 512, 1024]))
    column = {name: i for i, name in enumerate(header)}
    rates = [error_rate(int(row[column["errors"]]), int(row[column["trials"]])) for row in rows]
    assert [r.trials for r in rates] == [500, 500, 500]
    for shorter, longer in zip(rates, rates[1:]):
        sigma = np.hypot(shorter.sigma, longer.sigma)
        assert longer.rate <= shorter.rate + 2 * sigma
