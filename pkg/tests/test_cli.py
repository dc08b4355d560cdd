import json

import pytest

from stitchdec.cli import EXIT_CONTRACT, EXIT_INPUT, EXIT_OK, EXIT_USAGE, main
from stitchdec.scenario import load_scenario_file


@pytest.fixture
def suite(tmp_path):
    path = tmp_path / "suite.json"
    assert main(["generate", "--count", "6", "--seed", "3", "--misalignment-rate", "0.5", "--out", str(path)]) == 0
    return path


def test_run_writes_report_and_transcripts(suite, tmp_path, capsys):
    out = tmp_path / "report.json"
    code = main(["run", "--scenarios", str(suite), "--mode", "rabs", "--beam", "10", "--nu", "1.0",
                 "--upsilon", "0.5", "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text())
    assert report["summary"]["utterances"] == 6
    assert report["config"]["beam"] == 10 and report["config"]["ctc_weight"] == 0.4
    lines = (tmp_path / "report.json.transcripts.jsonl").read_text().splitlines()
    assert len(lines) == 6
    assert all(json.loads(line)["correct"] for line in lines)
    stdout = capsys.readouterr().out.strip().splitlines()
    assert len(stdout) == 1 and stdout[0].startswith("mode=rabs correct=6/6")


def test_identical_runs_are_byte_identical(suite, tmp_path):
    outputs = []
    for k in range(2):
        out = tmp_path / f"r{k}.json"
        assert main(["run", "--scenarios", str(suite), "--seed", "17", "--out", str(out)]) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_threads_do_not_change_output(suite, tmp_path, monkeypatch):
    serial, parallel = tmp_path / "s.json", tmp_path / "p.json"
    assert main(["run", "--scenarios", str(suite), "--out", str(serial)]) == 0
    monkeypatch.setenv("STITCHDEC_THREADS", "4")
    assert main(["run", "--scenarios", str(suite), "--out", str(parallel)]) == 0
    assert serial.read_bytes() == parallel.read_bytes()


def test_csv_format(suite, tmp_path):
    out = tmp_path / "r.csv"
    assert main(["run", "--scenarios", str(suite), "--format", "csv", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 1 + 6 + 1
    assert rows[-1].startswith("SUMMARY")


def test_batch_matches_rabs_on_single_block_suite(tmp_path):
    path = tmp_path / "one_block.json"
    assert main(["generate", "--count", "5", "--seed", "2", "--frames-per-block", "1000", "--out", str(path)]) == 0
    transcripts = {}
    for mode in ("rabs", "batch"):
        target = tmp_path / f"{mode}.jsonl"
        assert main(["run", "--scenarios", str(path), "--mode", mode, "--transcripts", str(target)]) == 0
        transcripts[mode] = [(r["tokens"], r["score"]) for r in map(json.loads, target.read_text().splitlines())]
    assert transcripts["rabs"] == transcripts["batch"]


def test_generate_is_deterministic(tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    for path in (first, second):
        assert main(["generate", "--count", "10", "--seed", "5", "--out", str(path)]) == 0
    assert first.read_bytes() == second.read_bytes()


def test_full_misalignment_rate_puts_an_event_everywhere(tmp_path):
    path = tmp_path / "m.json"
    assert main(["generate", "--count", "10", "--misalignment-rate", "1.0", "--out", str(path)]) == 0
    assert all(s.misalignment_events for s in load_scenario_file(path).scenarios)


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["run"],
        ["run", "--scenarios", "x.json", "--mode", "fast"],
        ["run", "--scenarios", "x.json", "--bogus"],
        ["generate", "--out", "x.json", "--min-tokens", "9", "--max-tokens", "3"],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err.lower() or argv[0] == "generate"


def test_invalid_flag_value_is_usage_error(suite):
    assert main(["run", "--scenarios", str(suite), "--beam", "0"]) == EXIT_USAGE


def test_malformed_input(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "stitchdec-scenarios",\n "version": 1,,\n}')
    assert main(["run", "--scenarios", str(bad)]) == EXIT_INPUT
    assert "line 2" in capsys.readouterr().err
    assert main(["run", "--scenarios", str(tmp_path / "missing.json")]) == EXIT_INPUT


def test_bad_thread_setting(suite, monkeypatch):
    monkeypatch.setenv("STITCHDEC_THREADS", "many")
    assert main(["run", "--scenarios", str(suite)]) == EXIT_USAGE


def test_contract_violation_exit_code(monkeypatch, suite):
    from stitchdec import cli
    from stitchdec.errors import ContractViolation

    def boom(*args, **kwargs):
        raise ContractViolation("scorer broke")

    monkeypatch.setattr(cli, "decode_suite", boom)
    assert main(["run", "--scenarios", str(suite)]) == EXIT_CONTRACT
