"""Command line front end.

Every command takes an explicit seed (or reads one from its input file) and
embeds that seed plus the SHA-256 of each input file in whatever it writes,
so any published number can be regenerated byte for byte from the command
line in the report.

Exit codes: 0 means the run completed with the expected outcome (for
`audit`, confirmation at the risk limit), 2 means the audit escalated to a
full hand count, and 1 means bad input or a run that diverged from the
expected outcome.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .attacks import (
    ScenarioError,
    VoterPopulation,
    experiment_divergences,
    format_result_table,
    parse_scenario_document,
    run_clean_election,
    run_experiment,
    run_scenario_spec,
)
from .ballot import ElectionDocumentError, parse_election_definition
from .machine import stvm_config
from .printer import BallotFileError, ballots_to_text, parse_ballots_text
from .session import VoterProfile
from .tally import (
    AuditOutcome,
    AuditPlanError,
    TabulationError,
    audit_plan_from_json_dict,
    bravo_audit,
    tabulate,
)


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _envelope(command: str, seed: int, inputs: dict[str, Path]) -> dict:
    return {
        "command": command,
        "seed": seed,
        "inputs": {name: _file_digest(path) for name, path in inputs.items()},
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _cmd_run_experiment(args: argparse.Namespace) -> int:
    report = run_experiment(seed=args.seed)
    divergences = experiment_divergences(report)

    control_day = report.control.phase("election_day_voting")
    print(f"seed {report.seed}")
    print(
        f"control ({report.control.machine_label}): "
        f"pre-election test {'passed' if report.control.pre_election_test_passed else 'FAILED'}; "
        f"malware {'persisted' if report.control.persisted_after_reboot else 'did not persist'} "
        f"across reboot; {control_day.flips_on_paper} vote(s) flipped on election day"
    )
    stvm = report.stvm
    print(
        f"stateless ({stvm.machine_label}): "
        f"pre-election test {'passed' if stvm.pre_election_test_passed else 'FAILED'}; "
        f"malware {'persisted' if stvm.persisted_after_reboot else 'gone'} after reboot; "
        f"{stvm.phase('election_day_voting').flips_on_paper} flip(s) post-reboot, "
        f"{stvm.phase('mid_session_install').flips_on_paper} in the no-reboot window, "
        f"{stvm.phase('post_reboot_voting').flips_on_paper} after the final reboot"
    )
    if divergences:
        for problem in divergences:
            print(f"divergence: {problem}", file=sys.stderr)
    else:
        print("experiment reproduced the expected outcome")

    if args.out:
        payload = _envelope("run-experiment", args.seed, {})
        payload["experiment"] = report.to_json_dict()
        _write_json(Path(args.out), payload)
    return 0 if not divergences else 1


def _cmd_run_scenario(args: argparse.Namespace) -> int:
    path = Path(args.scenario)
    try:
        spec = parse_scenario_document(path.read_text("utf-8"), base_dir=path.parent)
        result = run_scenario_spec(spec)
    except (OSError, ScenarioError, ElectionDocumentError) as exc:
        return _fail(f"{path}: {exc}")
    print(format_result_table(result), end="")
    if args.out:
        payload = _envelope("run-scenario", spec.seed, {"scenario": path})
        payload["result"] = result.to_json_dict()
        _write_json(Path(args.out), payload)
    return 0


def _cmd_simulate_election(args: argparse.Namespace) -> int:
    path = Path(args.election)
    try:
        election = parse_election_definition(path.read_text("utf-8"))
    except OSError as exc:
        return _fail(str(exc))
    except ElectionDocumentError as exc:
        return _fail(f"{path}: {exc}")
    try:
        population = VoterPopulation(
            count=args.voters,
            profile=VoterProfile(p_detect=args.p_detect),
            undervote_rate=args.undervote_rate,
        )
    except (ValueError, ScenarioError) as exc:
        return _fail(str(exc))

    cast, spoiled = run_clean_election(stvm_config(), election, population, args.seed)
    tally = tabulate(cast + spoiled, election)

    if args.ballots_out:
        header = (
            f"# simulate-election seed={args.seed} "
            f"election_sha256={_file_digest(path)}\n"
            f"# {population.distribution_note()}\n\n"
        )
        Path(args.ballots_out).write_text(header + ballots_to_text(cast + spoiled), "utf-8")

    payload = _envelope("simulate-election", args.seed, {"election": path})
    payload["population"] = {
        "count": population.count,
        "p_detect": population.profile.p_detect,
        "undervote_rate": population.undervote_rate,
        "note": population.distribution_note(),
    }
    payload["tally"] = tally.to_json_dict(election)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.tally_out:
        Path(args.tally_out).write_text(text, "utf-8")
    else:
        print(text, end="")
    return 0


def _cmd_audit(args: argparse.Namespace) -> int:
    ballots_path = Path(args.ballots)
    plan_path = Path(args.plan)
    try:
        ballots = parse_ballots_text(ballots_path.read_text("utf-8"))
        plan = audit_plan_from_json_dict(json.loads(plan_path.read_text("utf-8")))
    except OSError as exc:
        return _fail(str(exc))
    except (BallotFileError, TabulationError) as exc:
        return _fail(f"{ballots_path}: {exc}")
    except (json.JSONDecodeError, AuditPlanError) as exc:
        return _fail(f"{plan_path}: {exc}")

    try:
        result = bravo_audit(plan, ballots)
    except AuditPlanError as exc:
        return _fail(str(exc))

    print(
        f"{result.outcome.value}: {result.samples_drawn} ballot(s) sampled, "
        f"final statistic {result.final_statistic:.3f} "
        f"(threshold {1.0 / plan.risk_limit:.1f})"
    )
    if args.out:
        payload = _envelope("audit", plan.seed, {"ballots": ballots_path, "plan": plan_path})
        payload["plan"] = {
            "risk_limit": plan.risk_limit,
            "contest_id": plan.contest_id,
            "reported_tallies": dict(plan.reported_tallies),
            "max_samples": plan.max_samples,
        }
        payload["result"] = result.to_json_dict()
        _write_json(Path(args.out), payload)
    return 0 if result.outcome is AuditOutcome.CONFIRMED else 2


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    path = Path(args.election)
    try:
        election = parse_election_definition(path.read_text("utf-8"))
    except OSError as exc:
        return _fail(str(exc))
    except ElectionDocumentError as exc:
        return _fail(f"{path}: {exc}")

    ui_dir = Path(args.ui) if args.ui else None
    if ui_dir is not None and not ui_dir.is_dir():
        return _fail(f"--ui: {ui_dir} is not a directory")

    app = create_app(election, machine=args.machine, seed=args.seed, ui_dir=ui_dir)
    print(f"serving on http://{args.host}:{args.port} (machine: {args.machine})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stvmsim",
        description="Deterministic voting-machine simulator and attack harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-experiment", help="side-by-side malware persistence experiment")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--out", help="write the full JSON report here")
    p.set_defaults(func=_cmd_run_experiment)

    p = sub.add_parser("run-scenario", help="run a scenario definition file")
    p.add_argument("scenario", help="scenario JSON document")
    p.add_argument("--out", help="write the JSON result here")
    p.set_defaults(func=_cmd_run_scenario)

    p = sub.add_parser("simulate-election", help="clean election: ballots plus tally")
    p.add_argument("election", help="election definition JSON")
    p.add_argument("--voters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p-detect", type=float, default=0.77, dest="p_detect")
    p.add_argument("--undervote-rate", type=float, default=0.1, dest="undervote_rate")
    p.add_argument("--ballots-out", dest="ballots_out", help="write the paper ballots here")
    p.add_argument("--tally-out", dest="tally_out", help="write the tally JSON here (default: stdout)")
    p.set_defaults(func=_cmd_simulate_election)

    p = sub.add_parser("audit", help="ballot-polling audit of a ballots file")
    p.add_argument("ballots", help="ballots text file")
    p.add_argument("plan", help="audit plan JSON")
    p.add_argument("--out", help="write the JSON result here")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("serve", help="HTTP API for interactive sessions")
    p.add_argument("--election", required=True, help="election definition JSON")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--machine", choices=["stvm", "bmd"], default="stvm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ui", help="directory with a built user interface to serve at /ui")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
