import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from stvmsim.ballot import election_to_json_dict
from stvmsim.cli import main
from stvmsim.printer import parse_ballots_text

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def write_election(tmp_path, election):
    path = tmp_path / "election.json"
    path.write_text(json.dumps(election_to_json_dict(election)), "utf-8")
    return path


# -- run-experiment ----------------------------------------------------------


def test_run_experiment_reports_and_exits_zero(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert main(["run-experiment", "--seed", "2024", "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "experiment reproduced the expected outcome" in stdout
    assert "malware persisted across reboot" in stdout
    assert "gone after reboot" in stdout
    payload = json.loads(out.read_text("utf-8"))
    assert payload["command"] == "run-experiment"
    assert payload["seed"] == 2024
    assert payload["experiment"]["divergences"] == []
    assert payload["experiment"]["control"]["persisted_after_reboot"] is True
    assert payload["experiment"]["stvm"]["persisted_after_reboot"] is False


def test_run_experiment_output_is_byte_stable(tmp_path):
    first = tmp_path / "a.json"
    second = tmp_path / "b.json"
    main(["run-experiment", "--out", str(first)])
    main(["run-experiment", "--out", str(second)])
    assert first.read_bytes() == second.read_bytes()


# -- run-scenario -------------------------------------------------------------


def test_run_scenario_fixture_documents(tmp_path, capsys):
    out = tmp_path / "result.json"
    scenario = FIXTURES / "scenario_remote_control_vs_stvm.json"
    assert main(["run-scenario", str(scenario), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "network_refusal" in stdout
    assert "flips cast undetected   0" in stdout
    payload = json.loads(out.read_text("utf-8"))
    assert payload["command"] == "run-scenario"
    assert payload["result"]["detected_by"] == ["network_refusal"]
    import hashlib

    assert payload["inputs"]["scenario"] == hashlib.sha256(scenario.read_bytes()).hexdigest()


def test_run_scenario_bdr_fixture_catches_the_disc(capsys):
    assert main(["run-scenario", str(FIXTURES / "scenario_bdr_swap_defended.json")]) == 0
    stdout = capsys.readouterr().out
    assert "byte_diff, checksum" in stdout
    assert "mitigation applied      image_replacement" in stdout


def test_run_scenario_missing_file(tmp_path, capsys):
    assert main(["run-scenario", str(tmp_path / "absent.json")]) == 1
    assert "error:" in capsys.readouterr().err


def test_run_scenario_rejects_bad_document(tmp_path, capsys, election):
    doc = tmp_path / "bad.json"
    doc.write_text(
        json.dumps(
            {
                "kind": "remote_control",
                "population": {"count": 2},
                "election": election_to_json_dict(election),
                "surprise": True,
            }
        ),
        "utf-8",
    )
    assert main(["run-scenario", str(doc)]) == 1
    assert "unknown field 'surprise'" in capsys.readouterr().err


# -- simulate-election -----------------------------------------------------------


def test_simulate_election_writes_ballots_and_tally(tmp_path, capsys, election):
    election_path = write_election(tmp_path, election)
    ballots_path = tmp_path / "ballots.txt"
    code = main(
        [
            "simulate-election",
            str(election_path),
            "--voters", "30",
            "--seed", "5",
            "--ballots-out", str(ballots_path),
        ]
    )
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["command"] == "simulate-election"
    assert payload["tally"]["total_ballots"] == 30
    assert payload["population"]["count"] == 30

    text = ballots_path.read_text("utf-8")
    assert text.startswith("# simulate-election seed=5 election_sha256=")
    ballots = parse_ballots_text(text)
    assert len(ballots) == 30
    # the ballots the file holds add up to the tally the command printed
    doe = sum(1 for b in ballots for line in b.lines if line.text == "John Doe")
    assert payload["tally"]["contests"][0]["counts"]["john-doe"] == doe


def test_simulate_election_is_deterministic(tmp_path, election):
    election_path = write_election(tmp_path, election)
    outs = []
    for name in ("a", "b"):
        ballots = tmp_path / f"{name}.txt"
        tally = tmp_path / f"{name}.json"
        main(
            [
                "simulate-election", str(election_path),
                "--voters", "20", "--seed", "9",
                "--ballots-out", str(ballots), "--tally-out", str(tally),
            ]
        )
        outs.append((ballots.read_bytes(), tally.read_bytes()))
    assert outs[0] == outs[1]

    other = tmp_path / "c.json"
    main(["simulate-election", str(election_path), "--voters", "20", "--seed", "10",
          "--tally-out", str(other)])
    assert other.read_bytes() != outs[0][1]


def test_simulate_election_rejects_bad_inputs(tmp_path, capsys, election):
    bad = tmp_path / "bad.json"
    bad.write_text("{", "utf-8")
    assert main(["simulate-election", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err

    election_path = write_election(tmp_path, election)
    assert main(["simulate-election", str(election_path), "--p-detect", "2.0"]) == 1
    assert "p_detect" in capsys.readouterr().err


# -- audit ------------------------------------------------------------------------


def test_audit_confirms_the_landslide(tmp_path, capsys):
    out = tmp_path / "audit.json"
    code = main(
        [
            "audit",
            str(FIXTURES / "ballots_landslide.txt"),
            str(FIXTURES / "audit_plan_governor.json"),
            "--out", str(out),
        ]
    )
    assert code == 0
    assert "confirmed_at_risk_limit" in capsys.readouterr().out
    payload = json.loads(out.read_text("utf-8"))
    assert payload["result"]["outcome"] == "confirmed_at_risk_limit"
    assert payload["plan"]["risk_limit"] == 0.05
    assert set(payload["inputs"]) == {"ballots", "plan"}


def test_audit_escalates_on_a_wrong_report(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(
        json.dumps(
            {
                "risk_limit": 0.05,
                "contest_id": "governor",
                "reported_tallies": {"John Doe": 50, "David Rayne": 100},
            }
        ),
        "utf-8",
    )
    code = main(["audit", str(FIXTURES / "ballots_landslide.txt"), str(plan)])
    assert code == 2
    assert "escalate_to_full_count" in capsys.readouterr().out


def test_audit_rejects_bad_files(tmp_path, capsys):
    ballots = tmp_path / "ballots.txt"
    ballots.write_text("BALLOT B-1 Cast\ngovernor: John Doe\n", "utf-8")
    bad_plan = tmp_path / "plan.json"
    bad_plan.write_text(json.dumps({"risk_limit": 0.05}), "utf-8")
    assert main(["audit", str(ballots), str(bad_plan)]) == 1
    assert "missing required field" in capsys.readouterr().err

    broken = tmp_path / "broken.txt"
    broken.write_text("governor: John Doe\n", "utf-8")
    good_plan = FIXTURES / "audit_plan_governor.json"
    assert main(["audit", str(broken), str(good_plan)]) == 1
    assert "before any ballot header" in capsys.readouterr().err


def test_simulated_near_tie_escalates_honestly(tmp_path, capsys, election):
    # a uniform electorate produces a near-tie, and the audit of a near-tie
    # refuses to confirm at a 5% risk limit: exit code 2 is the honest answer
    election_path = write_election(tmp_path, election)
    ballots_path = tmp_path / "ballots.txt"
    tally_path = tmp_path / "tally.json"
    main(
        [
            "simulate-election", str(election_path),
            "--voters", "200", "--seed", "0",
            "--ballots-out", str(ballots_path), "--tally-out", str(tally_path),
        ]
    )
    tally = json.loads(tally_path.read_text("utf-8"))["tally"]
    reported = tally["contests"][0]["counts_by_name"]
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(
        json.dumps({"risk_limit": 0.05, "contest_id": "governor", "reported_tallies": reported}),
        "utf-8",
    )
    code = main(["audit", str(ballots_path), str(plan_path)])
    capsys.readouterr()
    assert code == 2


# -- serve argument validation --------------------------------------------------------


def test_serve_rejects_bad_ui_dir(tmp_path, capsys, election):
    election_path = write_election(tmp_path, election)
    code = main(
        ["serve", "--election", str(election_path), "--ui", str(tmp_path / "missing")]
    )
    assert code == 1
    assert "not a directory" in capsys.readouterr().err


def test_serve_rejects_missing_election(tmp_path, capsys):
    assert main(["serve", "--election", str(tmp_path / "absent.json")]) == 1
    assert "error:" in capsys.readouterr().err


# -- packaging ---------------------------------------------------------------------------


def test_console_entry_point_runs():
    exe = shutil.which("stvmsim")
    if exe is None:
        pytest.skip("console script not on PATH in this environment")
    proc = subprocess.run(
        [exe, "run-scenario", str(FIXTURES / "scenario_hmpb_undervote.json")],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    assert "hand_marked_paper" in proc.stdout


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "stvmsim.cli", "audit",
         str(FIXTURES / "ballots_landslide.txt"),
         str(FIXTURES / "audit_plan_governor.json")],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    assert "confirmed_at_risk_limit" in proc.stdout
