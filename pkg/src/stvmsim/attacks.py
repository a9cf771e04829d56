"""Attack scenarios, defenses, and the persistence experiment.

Every scenario runs real voting sessions on a real machine model; nothing
here shortcuts to "assume the malware flips X votes". The harness plants a
payload through a concrete route (USB stick, BIOS implant, swapped boot
disc, network), optionally applies the official-side defenses, drives a
seeded voter population through full sessions, and reports what ended up
on paper, what was detected and through which channel, and whether the
malware outlived a reboot.

Compared runs share their master seed, so voter intents and detection
draws are common random numbers: a control machine and a stateless machine
given the same seed face literally the same electorate.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .ballot import Candidate, Contest, ElectionDefinition, parse_election_definition
from .machine import (
    BootImage,
    ChecksumVerdict,
    EffectKind,
    Machine,
    MachineConfig,
    NetworkRefusedError,
    Payload,
    StorageError,
    bmd_config,
    build_base_image,
    byte_diff,
    connect_network,
    content_digest,
    extract_grafted_payloads,
    graft_payload_into_image,
    make_machine_state,
    parse_manifest,
    selection_transform_payload,
    stvm_config,
    swap_payload,
    verify_checksum,
    wipe_payload,
)
from .printer import Disposition, PaperBallot
from .seeds import derive_seed
from .session import PhaseKind, VoterProfile, VotingSession
from .tally import tabulate_marks


class ScenarioError(ValueError):
    pass


class InstallTime(Enum):
    PRE_ELECTION = "pre_election"
    DURING_VOTING = "during_voting"


class InstallRoute(Enum):
    USB = "usb"
    BIOS_IMPLANT = "bios_implant"
    IMAGE_SWAP = "image_swap"


class DetectionChannel(Enum):
    VOTER = "voter"
    CHECKSUM = "checksum"
    BYTE_DIFF = "byte_diff"
    OFFICIAL_MEDIA_INSPECTION = "official_media_inspection"
    NETWORK_REFUSAL = "network_refusal"


class Mitigation(Enum):
    REBOOT = "reboot"
    BIOS_RELOAD = "bios_reload"
    IMAGE_REPLACEMENT = "image_replacement"


@dataclass(frozen=True)
class VoteFlip:
    """Selection-transforming malware delivered through a chosen route."""

    target_contest: str
    mapping: tuple[tuple[str, str], ...]
    install_time: InstallTime
    route: InstallRoute
    detach_after_install: bool = True


def vote_flip(
    target_contest: str,
    mapping: Mapping[str, str],
    install_time: InstallTime,
    route: InstallRoute,
    detach_after_install: bool = True,
) -> VoteFlip:
    return VoteFlip(
        target_contest=target_contest,
        mapping=tuple(sorted(mapping.items())),
        install_time=install_time,
        route=route,
        detach_after_install=detach_after_install,
    )


@dataclass(frozen=True)
class DoSWipe:
    """Wipe-and-shutdown malware aimed at taking machines out of service."""

    trigger_time: InstallTime


@dataclass(frozen=True)
class RemoteControl:
    """Network delivery attempt; installs a first-contest swap if it connects."""


@dataclass(frozen=True)
class BdrSwap:
    """The boot disc in the drive is not the disc officials mastered."""

    modified_image: BootImage


@dataclass(frozen=True)
class HmpbUndervoteHack:
    """Insider adds a mark to hand-marked sheets left blank in one contest."""

    contest_id: str
    insider_choice: str


@dataclass(frozen=True)
class HmpbOvervoteHack:
    """Insider adds a rival mark to full sheets, invalidating them."""

    contest_id: str
    insider_choice: str


@dataclass(frozen=True)
class PhysicalTamperFlag:
    """Tamper-evident seals found disturbed at setup; nothing was altered."""


AttackScenario = (
    VoteFlip
    | DoSWipe
    | RemoteControl
    | BdrSwap
    | HmpbUndervoteHack
    | HmpbOvervoteHack
    | PhysicalTamperFlag
)

_SCENARIO_KINDS: dict[type, str] = {
    VoteFlip: "vote_flip",
    DoSWipe: "dos_wipe",
    RemoteControl: "remote_control",
    BdrSwap: "bdr_swap",
    HmpbUndervoteHack: "hmpb_undervote",
    HmpbOvervoteHack: "hmpb_overvote",
    PhysicalTamperFlag: "physical_tamper",
}


@dataclass(frozen=True)
class VoterPopulation:
    """Seeded synthetic electorate. Intents are uniform over candidates with
    a configurable per-contest undervote rate; reports carry a note saying
    so, since real electorates are anything but uniform."""

    count: int
    profile: VoterProfile
    undervote_rate: float = 0.1

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ScenarioError(f"population count must be non-negative, got {self.count}")
        if not 0.0 <= self.undervote_rate <= 1.0:
            raise ScenarioError(
                f"undervote_rate must be within [0, 1], got {self.undervote_rate}"
            )

    def distribution_note(self) -> str:
        return (
            "synthetic voter intents: uniform candidate choice with "
            f"{self.undervote_rate:.0%} per-contest undervote rate"
        )

    def intents_for(
        self, election: ElectionDefinition, master_seed: int, index: int
    ) -> dict[str, frozenset[str]]:
        rng = random.Random(derive_seed(master_seed, "voter", index))
        intents: dict[str, frozenset[str]] = {}
        for contest in election.contests:
            if rng.random() < self.undervote_rate:
                intents[contest.contest_id] = frozenset()
            else:
                ids = sorted(contest.candidate_ids())
                intents[contest.contest_id] = frozenset(rng.sample(ids, contest.vote_for))
        return intents


@dataclass(frozen=True)
class DefenseConfig:
    """Which official-side checks run before the election opens."""

    verify_image_checksum: bool = True
    byte_diff_on_mismatch: bool = True
    reload_bios: bool = False


_BYTE_DIFF_OFFSET_CAP = 32


@dataclass(frozen=True)
class ScenarioResult:
    machine_label: str
    scenario_kind: str
    seed: int
    flips_attempted: int
    flips_on_paper: int
    flips_cast_undetected: int
    detected_by: tuple[str, ...]
    persisted_after_reboot: bool
    mitigation_applied: str | None
    ballots_cast: int = 0
    ballots_spoiled: int = 0
    alerts_raised: int = 0
    sessions_denied: int = 0
    data_destroyed: int = 0
    flips_per_session: tuple[int, ...] = ()
    byte_diff_count: int = 0
    byte_diff_first_offsets: tuple[int, ...] = ()
    notes: tuple[str, ...] = ()
    tally_json: dict | None = None

    def __post_init__(self) -> None:
        if not (self.flips_attempted >= self.flips_on_paper >= self.flips_cast_undetected >= 0):
            raise ScenarioError(
                "flip accounting must satisfy attempted >= on_paper >= cast_undetected, got "
                f"{self.flips_attempted} >= {self.flips_on_paper} >= {self.flips_cast_undetected}"
            )

    def to_json_dict(self) -> dict:
        out: dict = {
            "machine": self.machine_label,
            "scenario": self.scenario_kind,
            "seed": self.seed,
            "flips_attempted": self.flips_attempted,
            "flips_on_paper": self.flips_on_paper,
            "flips_cast_undetected": self.flips_cast_undetected,
            "detected_by": list(self.detected_by),
            "persisted_after_reboot": self.persisted_after_reboot,
            "mitigation_applied": self.mitigation_applied,
            "ballots_cast": self.ballots_cast,
            "ballots_spoiled": self.ballots_spoiled,
            "alerts_raised": self.alerts_raised,
            "sessions_denied": self.sessions_denied,
            "data_destroyed": self.data_destroyed,
            "flips_per_session": list(self.flips_per_session),
            "byte_diff_count": self.byte_diff_count,
            "byte_diff_first_offsets": list(self.byte_diff_first_offsets),
            "notes": list(self.notes),
        }
        if self.tally_json is not None:
            out["tally"] = self.tally_json
        return out


def format_result_table(result: ScenarioResult) -> str:
    rows = [
        ("machine", result.machine_label),
        ("scenario", result.scenario_kind),
        ("seed", result.seed),
        ("flips attempted", result.flips_attempted),
        ("flips on paper", result.flips_on_paper),
        ("flips cast undetected", result.flips_cast_undetected),
        ("detected by", ", ".join(result.detected_by) or "(nothing)"),
        ("persisted after reboot", "yes" if result.persisted_after_reboot else "no"),
        ("mitigation applied", result.mitigation_applied or "(none)"),
        ("ballots cast / spoiled", f"{result.ballots_cast} / {result.ballots_spoiled}"),
        ("alerts raised", result.alerts_raised),
        ("sessions denied", result.sessions_denied),
        ("stored items destroyed", result.data_destroyed),
    ]
    width = max(len(k) for k, _ in rows)
    lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
    lines.extend(f"note: {n}" for n in result.notes)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Session driving


@dataclass
class _SessionStats:
    attempted: int = 0
    on_paper: int = 0
    alerted: bool = False
    ballot: PaperBallot | None = None


def _transform_targets(machine: Machine, contest_id: str) -> bool:
    return any(
        p.effect.kind is EffectKind.SELECTION_TRANSFORM and p.effect.contest_id == contest_id
        for p in machine.active_software
    )


def _drive_session(
    machine: Machine,
    election: ElectionDefinition,
    profile: VoterProfile,
    intents: Mapping[str, frozenset[str]],
    seed: int,
    mid_session_hook: Callable[[Machine], None] | None = None,
) -> _SessionStats:
    """Walk one voter through every contest, spoiling on alert."""
    stats = _SessionStats()
    session = VotingSession(election, machine, profile, seed=seed)
    for index, contest in enumerate(election.contests):
        if index == 0 and mid_session_hook is not None:
            mid_session_hook(machine)
        intent = intents.get(contest.contest_id, frozenset())
        if not intent:
            session.skip_contest()
        else:
            for candidate_id in sorted(intent):
                session.make_selection(contest.contest_id, candidate_id)
            if _transform_targets(machine, contest.contest_id):
                stats.attempted += 1
            session.request_print()
        if session.printed_mismatch(index):
            stats.on_paper += 1
        session.confirm_printed()
        if session.phase.kind is PhaseKind.ALERT_RAISED:
            stats.alerted = True
            stats.ballot = session.spoil_ballot()
            return stats
    stats.ballot = session.cast_ballot()
    return stats


# ---------------------------------------------------------------------------
# Scenario execution


def _flip_payload(scenario: VoteFlip, election: ElectionDefinition) -> Payload:
    if not election.has_contest(scenario.target_contest):
        raise ScenarioError(f"vote_flip targets unknown contest '{scenario.target_contest}'")
    contest = election.contest(scenario.target_contest)
    mapping = dict(scenario.mapping)
    ids = set(contest.candidate_ids())
    missing = sorted(ids - set(mapping))
    if missing:
        raise ScenarioError(
            f"vote_flip mapping must cover every candidate; missing '{missing[0]}'"
        )
    stray = sorted(set(mapping) - ids)
    if stray:
        raise ScenarioError(f"vote_flip mapping references unknown candidate '{stray[0]}'")
    bad_target = sorted(set(mapping.values()) - ids)
    if bad_target:
        raise ScenarioError(f"vote_flip mapping maps onto unknown candidate '{bad_target[0]}'")
    return selection_transform_payload("flip-" + scenario.target_contest, scenario.target_contest, mapping)


def _default_remote_payload(election: ElectionDefinition) -> Payload:
    contest = election.contests[0]
    if len(contest.candidates) < 2:
        raise ScenarioError("remote_control needs a first contest with two candidates")
    a, b = contest.candidates[0].candidate_id, contest.candidates[1].candidate_id
    return swap_payload("remote-flip", contest.contest_id, a, b)


def run_scenario(
    config: MachineConfig,
    scenario: AttackScenario,
    population: VoterPopulation,
    election: ElectionDefinition,
    seed: int,
    reboot_between_voters: bool = True,
    defenses: DefenseConfig = DefenseConfig(),
    machine_image: BootImage | None = None,
    reference_digest: bytes | None = None,
) -> ScenarioResult:
    """Play one attack against one machine with a full voter population.

    reboot_between_voters models the operational discipline of power-cycling
    at polls open and between voters; turning it off shows what the same
    machine does without that discipline. When machine_image is given it is
    the disc actually in the drive (for file-based runs) and reference_digest
    is the officials' independently held digest; with neither given the
    harness masters its own genuine disc and keeps its digest as reference.
    """
    if isinstance(scenario, (HmpbUndervoteHack, HmpbOvervoteHack)):
        raise ScenarioError("hand-marked paper scenarios run through run_hmpb_baseline")
    scenario_kind = _SCENARIO_KINDS[type(scenario)]

    detected: set[DetectionChannel] = set()
    notes: list[str] = [population.distribution_note()]
    mitigation: Mitigation | None = None
    byte_offsets: tuple[int, ...] = ()
    byte_diff_count = 0
    data_destroyed = 0
    sessions_denied = 0
    planted_ids: set[str] = set()
    volatile_install_happened = False

    master = build_base_image(f"{election.election_id}-disc")
    if machine_image is None:
        disc = master
        master_content: bytes | None = master.content
        reference = reference_digest if reference_digest is not None else content_digest(master.content)
    else:
        disc = machine_image
        master_content = None
        reference = reference_digest
        if reference is None:
            notes.append("no reference digest supplied; image checksum verification skipped")

    machine = Machine(make_machine_state(config, disc))

    flip: Payload | None = None
    wipe: Payload | None = None

    # Pre-boot tampering, by route.
    if isinstance(scenario, VoteFlip):
        flip = _flip_payload(scenario, election)
        planted_ids.add(flip.payload_id)
        if scenario.route is InstallRoute.IMAGE_SWAP:
            if scenario.install_time is not InstallTime.PRE_ELECTION:
                raise ScenarioError("image_swap route requires pre_election install time")
            machine.swap_boot_image(graft_payload_into_image(machine.state.boot_image, flip))
        elif scenario.route is InstallRoute.BIOS_IMPLANT:
            if scenario.install_time is not InstallTime.PRE_ELECTION:
                raise ScenarioError("bios_implant route requires pre_election install time")
            machine.implant_bios(flip)
    elif isinstance(scenario, BdrSwap):
        machine.swap_boot_image(scenario.modified_image)
        planted_ids.update(
            p.payload_id for p in extract_grafted_payloads(scenario.modified_image.content)
        )
    elif isinstance(scenario, PhysicalTamperFlag):
        detected.add(DetectionChannel.OFFICIAL_MEDIA_INSPECTION)
        notes.append("tamper-evident seal found disturbed at setup and flagged for investigation")
    elif isinstance(scenario, DoSWipe):
        wipe = wipe_payload("wipe-and-shutdown")
        planted_ids.add(wipe.payload_id)

    # Official-side defenses, applied before the machine powers on.
    if defenses.reload_bios:
        had_implant = machine.state.bios.firmware_payload is not None
        machine.reload_bios()
        if had_implant:
            mitigation = Mitigation.BIOS_RELOAD
            notes.append("BIOS reloaded from trusted media; implanted firmware discarded")
    if defenses.verify_image_checksum and reference is not None:
        if verify_checksum(machine.state.boot_image, reference) is ChecksumVerdict.MISMATCH:
            detected.add(DetectionChannel.CHECKSUM)
            if defenses.byte_diff_on_mismatch:
                if master_content is not None:
                    diffs = byte_diff(machine.state.boot_image.content, master_content)
                    byte_diff_count = len(diffs)
                    byte_offsets = tuple(d.offset for d in diffs[:_BYTE_DIFF_OFFSET_CAP])
                    detected.add(DetectionChannel.BYTE_DIFF)
                else:
                    notes.append("reference master unavailable; byte-level comparison skipped")
            mitigation = Mitigation.IMAGE_REPLACEMENT
            machine.swap_boot_image(master)
            notes.append("boot image failed checksum verification and was replaced")

    machine.boot()

    # Powered-on installs that happen before any voter arrives.
    if isinstance(scenario, VoteFlip) and scenario.route is InstallRoute.USB:
        if scenario.install_time is InstallTime.PRE_ELECTION:
            machine.attach_media("usb-attack")
            machine.install_payload(flip, "usb-attack")
            if scenario.detach_after_install:
                machine.detach_media("usb-attack")
            if not config.has_persistent_store:
                volatile_install_happened = True
    elif isinstance(scenario, DoSWipe) and scenario.trigger_time is InstallTime.PRE_ELECTION:
        machine.attach_media("usb-attack")
        machine.install_payload(wipe, "usb-attack")
        machine.detach_media("usb-attack")
        if not config.has_persistent_store:
            volatile_install_happened = True
        data_destroyed = machine.trigger_wipe()
        try:
            machine.boot()
            mitigation = Mitigation.REBOOT
            notes.append("wipe found no persistent storage; a reboot restored service")
        except StorageError:
            # The loop below counts every denied session off the dead machine.
            mitigation = Mitigation.IMAGE_REPLACEMENT
            notes.append("persistent store destroyed; machine out of service until reinstalled")
    elif isinstance(scenario, RemoteControl):
        try:
            connect_network(machine.state)
            payload = _default_remote_payload(election)
            planted_ids.add(payload.payload_id)
            machine.install_via_network(payload)
            notes.append("network interface accepted the connection; payload delivered remotely")
        except NetworkRefusedError:
            detected.add(DetectionChannel.NETWORK_REFUSAL)
            notes.append("no network interface; remote delivery refused by construction")

    # Polls open: the same discipline that reboots between voters also
    # power-cycles before the first one.
    if reboot_between_voters and machine.powered:
        machine.reboot()

    flips_attempted = 0
    flips_on_paper = 0
    flips_cast_undetected = 0
    flips_per_session: list[int] = []
    ballots_cast = 0
    ballots_spoiled = 0
    alerts = 0
    wipe_at = population.count // 2 if isinstance(scenario, DoSWipe) and scenario.trigger_time is InstallTime.DURING_VOTING else None

    for index in range(population.count):
        if not machine.powered:
            sessions_denied += population.count - index
            break
        if reboot_between_voters and index > 0:
            machine.reboot()

        if wipe_at is not None and index == wipe_at:
            machine.attach_media("usb-attack")
            machine.install_payload(wipe, "usb-attack")
            machine.detach_media("usb-attack")
            if not config.has_persistent_store:
                volatile_install_happened = True
            data_destroyed = machine.trigger_wipe()
            try:
                machine.boot()
                mitigation = Mitigation.REBOOT
                notes.append("wipe found no persistent storage; a reboot restored service")
            except StorageError:
                mitigation = Mitigation.IMAGE_REPLACEMENT
                sessions_denied += population.count - index
                notes.append("persistent store destroyed; machine out of service until reinstalled")
                break

        hook = None
        if (
            isinstance(scenario, VoteFlip)
            and scenario.install_time is InstallTime.DURING_VOTING
            and index == 0
        ):
            def hook(m: Machine) -> None:
                m.attach_media("usb-attack")
                m.install_payload(flip, "usb-attack")
                if scenario.detach_after_install:
                    m.detach_media("usb-attack")

            if not config.has_persistent_store:
                volatile_install_happened = True

        intents = population.intents_for(election, seed, index)
        stats = _drive_session(
            machine,
            election,
            population.profile,
            intents,
            derive_seed(seed, "session", index),
            mid_session_hook=hook,
        )
        flips_attempted += stats.attempted
        flips_on_paper += stats.on_paper
        flips_per_session.append(stats.on_paper)
        if stats.alerted:
            alerts += 1
            ballots_spoiled += 1
            detected.add(DetectionChannel.VOTER)
        else:
            ballots_cast += 1
            flips_cast_undetected += stats.on_paper

    # Close of polls: officials look the machine over.
    if machine.state.attached_media:
        detected.add(DetectionChannel.OFFICIAL_MEDIA_INSPECTION)
        notes.append(
            "foreign media found attached at close of polls: "
            + ", ".join(sorted(machine.state.attached_media))
        )

    # Persistence check: power-cycle and see whether any planted payload
    # is still part of what the machine runs.
    persisted = False
    try:
        if machine.powered:
            machine.reboot()
        else:
            machine.boot()
        persisted = any(p.payload_id in planted_ids for p in machine.active_software)
    except StorageError:
        persisted = False
    if mitigation is None and volatile_install_happened and not persisted:
        mitigation = Mitigation.REBOOT

    return ScenarioResult(
        machine_label=config.machine_kind.value,
        scenario_kind=scenario_kind,
        seed=seed,
        flips_attempted=flips_attempted,
        flips_on_paper=flips_on_paper,
        flips_cast_undetected=flips_cast_undetected,
        detected_by=tuple(sorted(ch.value for ch in detected)),
        persisted_after_reboot=persisted,
        mitigation_applied=mitigation.value if mitigation else None,
        ballots_cast=ballots_cast,
        ballots_spoiled=ballots_spoiled,
        alerts_raised=alerts,
        sessions_denied=sessions_denied,
        data_destroyed=data_destroyed,
        flips_per_session=tuple(flips_per_session),
        byte_diff_count=byte_diff_count,
        byte_diff_first_offsets=byte_offsets,
        notes=tuple(notes),
    )


def run_clean_election(
    config: MachineConfig,
    election: ElectionDefinition,
    population: VoterPopulation,
    seed: int,
    reboot_between_voters: bool = True,
) -> tuple[list[PaperBallot], list[PaperBallot]]:
    """No attack, just an election: returns (cast, spoiled) paper ballots.

    With a nonzero p_detect and no malware nothing ever mismatches, so
    spoiled stays empty; the split exists because callers tabulate cast
    ballots and archive spoiled ones."""
    machine = Machine(make_machine_state(config, build_base_image(f"{election.election_id}-disc")))
    machine.boot()
    cast: list[PaperBallot] = []
    spoiled: list[PaperBallot] = []
    for index in range(population.count):
        if reboot_between_voters and index > 0:
            machine.reboot()
        intents = population.intents_for(election, seed, index)
        stats = _drive_session(
            machine, election, population.profile, intents, derive_seed(seed, "session", index)
        )
        assert stats.ballot is not None
        if stats.ballot.disposition is Disposition.CAST:
            cast.append(stats.ballot)
        else:
            spoiled.append(stats.ballot)
    return cast, spoiled


# ---------------------------------------------------------------------------
# Hand-marked paper baseline


@dataclass(frozen=True)
class HmpbSheet:
    sheet_id: str
    marks: tuple[tuple[str, tuple[str, ...]], ...]

    def marks_dict(self) -> dict[str, frozenset[str]]:
        return {contest_id: frozenset(chosen) for contest_id, chosen in self.marks}


def generate_hmpb_sheets(
    population: VoterPopulation, election: ElectionDefinition, seed: int
) -> list[HmpbSheet]:
    sheets = []
    for index in range(population.count):
        intents = population.intents_for(election, seed, index)
        marks = tuple(
            (contest.contest_id, tuple(sorted(intents[contest.contest_id])))
            for contest in election.contests
        )
        sheets.append(HmpbSheet(sheet_id=f"H-{index:05d}", marks=marks))
    return sheets


def blanks_in_sheets(sheets: Sequence[HmpbSheet], contest_id: str) -> int:
    return sum(1 for sheet in sheets if not sheet.marks_dict().get(contest_id))


def apply_undervote_hack(
    sheets: Sequence[HmpbSheet], contest_id: str, insider_choice: str
) -> tuple[list[HmpbSheet], int]:
    """Add the insider's mark wherever the contest was left blank. The sheet
    afterwards looks like any legitimately marked sheet."""
    out = []
    touched = 0
    for sheet in sheets:
        marks = sheet.marks_dict()
        if not marks.get(contest_id):
            touched += 1
            new_marks = tuple(
                (cid, (insider_choice,) if cid == contest_id else chosen)
                for cid, chosen in sheet.marks
            )
            out.append(HmpbSheet(sheet_id=sheet.sheet_id, marks=new_marks))
        else:
            out.append(sheet)
    return out, touched


def apply_overvote_hack(
    sheets: Sequence[HmpbSheet],
    contest_id: str,
    insider_choice: str,
    election: ElectionDefinition,
) -> tuple[list[HmpbSheet], int]:
    """Add the insider's mark to fully marked sheets that chose someone
    else, pushing them over vote_for so the contest no longer counts."""
    vote_for = election.contest(contest_id).vote_for
    out = []
    touched = 0
    for sheet in sheets:
        chosen = sheet.marks_dict().get(contest_id, frozenset())
        if chosen and insider_choice not in chosen and len(chosen) == vote_for:
            touched += 1
            new_marks = tuple(
                (cid, tuple(sorted(set(marks) | {insider_choice})) if cid == contest_id else marks)
                for cid, marks in sheet.marks
            )
            out.append(HmpbSheet(sheet_id=sheet.sheet_id, marks=new_marks))
        else:
            out.append(sheet)
    return out, touched


def count_exploitable_blanks(ballots: Sequence[PaperBallot], contest_id: str) -> int:
    """Machine-printed ballots with nothing at all printed for a contest.

    A printed undervote line is not blank space: adding a mark to it would
    be a visible alteration. Only a missing line leaves room to exploit."""
    return sum(
        1
        for ballot in ballots
        if ballot.disposition is Disposition.CAST
        and not any(line.contest_id == contest_id for line in ballot.lines)
    )


def run_hmpb_baseline(
    scenario: HmpbUndervoteHack | HmpbOvervoteHack,
    population: VoterPopulation,
    election: ElectionDefinition,
    seed: int,
) -> ScenarioResult:
    """Insider manipulation of hand-marked paper, for contrast: there is no
    machine in the loop, so nothing reviews the alteration and detected_by
    stays empty. The returned tally shows the damage."""
    if not election.has_contest(scenario.contest_id):
        raise ScenarioError(f"hand-marked scenario targets unknown contest '{scenario.contest_id}'")
    contest = election.contest(scenario.contest_id)
    if not contest.has_candidate(scenario.insider_choice):
        raise ScenarioError(
            f"insider_choice '{scenario.insider_choice}' is not a candidate "
            f"in contest '{scenario.contest_id}'"
        )

    sheets = generate_hmpb_sheets(population, election, seed)
    if isinstance(scenario, HmpbUndervoteHack):
        sheets, touched = apply_undervote_hack(sheets, scenario.contest_id, scenario.insider_choice)
        note = f"undervote hack: insider mark added to {touched} blank sheet(s)"
    else:
        sheets, touched = apply_overvote_hack(
            sheets, scenario.contest_id, scenario.insider_choice, election
        )
        note = f"overvote hack: {touched} opposing sheet(s) pushed into invalidation"

    tally = tabulate_marks([sheet.marks_dict() for sheet in sheets], election)
    return ScenarioResult(
        machine_label="hand_marked_paper",
        scenario_kind=_SCENARIO_KINDS[type(scenario)],
        seed=seed,
        flips_attempted=touched,
        flips_on_paper=touched,
        flips_cast_undetected=touched,
        detected_by=(),
        persisted_after_reboot=False,
        mitigation_applied=None,
        ballots_cast=population.count,
        ballots_spoiled=0,
        notes=(population.distribution_note(), note),
        tally_json=tally.to_json_dict(election),
    )


# ---------------------------------------------------------------------------
# The persistence experiment


def experiment_election() -> ElectionDefinition:
    return ElectionDefinition(
        election_id="general-2024",
        title="General Election",
        contests=(
            Contest(
                contest_id="governor",
                title="Governor",
                vote_for=1,
                candidates=(
                    Candidate("john-doe", "John Doe"),
                    Candidate("david-rayne", "David Rayne"),
                ),
            ),
            Contest(
                contest_id="agriculture-commissioner",
                title="Commissioner of Agriculture",
                vote_for=1,
                candidates=(
                    Candidate("casey-brook", "Casey Brook"),
                    Candidate("morgan-reed", "Morgan Reed"),
                ),
            ),
        ),
    )


@dataclass(frozen=True)
class PhaseObservation:
    phase: str
    ballots_cast: int
    flips_on_paper: int
    active_payload_ids: tuple[str, ...]

    def to_json_dict(self) -> dict:
        return {
            "phase": self.phase,
            "ballots_cast": self.ballots_cast,
            "flips_on_paper": self.flips_on_paper,
            "active_payload_ids": list(self.active_payload_ids),
        }


@dataclass(frozen=True)
class ExperimentMachineRun:
    machine_label: str
    pre_election_test_passed: bool
    persisted_after_reboot: bool
    phases: tuple[PhaseObservation, ...]
    result: ScenarioResult

    def phase(self, name: str) -> PhaseObservation:
        for obs in self.phases:
            if obs.phase == name:
                return obs
        raise KeyError(name)

    def to_json_dict(self) -> dict:
        return {
            "machine": self.machine_label,
            "pre_election_test_passed": self.pre_election_test_passed,
            "persisted_after_reboot": self.persisted_after_reboot,
            "phases": [obs.to_json_dict() for obs in self.phases],
            "result": self.result.to_json_dict(),
        }


@dataclass(frozen=True)
class ExperimentReport:
    seed: int
    control: ExperimentMachineRun
    stvm: ExperimentMachineRun

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "control": self.control.to_json_dict(),
            "stvm": self.stvm.to_json_dict(),
            "divergences": experiment_divergences(self),
        }


_OBSERVE = VoterProfile(p_detect=0.0)  # observation mode: count flips, never alert

_TEST_INTENTS: tuple[dict[str, frozenset[str]], ...] = (
    {"governor": frozenset({"john-doe"}), "agriculture-commissioner": frozenset({"casey-brook"})},
    {"governor": frozenset({"david-rayne"}), "agriculture-commissioner": frozenset({"morgan-reed"})},
)

_WINDOW_INTENT: dict[str, frozenset[str]] = {
    "governor": frozenset({"john-doe"}),
    "agriculture-commissioner": frozenset({"casey-brook"}),
}


def _active_ids(machine: Machine) -> tuple[str, ...]:
    return tuple(p.payload_id for p in machine.active_software)


def _run_experiment_machine(
    config: MachineConfig, election: ElectionDefinition, seed: int, window_phase: bool
) -> ExperimentMachineRun:
    flip = swap_payload("governor-flip", "governor", "john-doe", "david-rayne")
    machine = Machine(make_machine_state(config, build_base_image(f"{election.election_id}-disc")))
    machine.boot()
    phases: list[PhaseObservation] = []

    # Install the voting software's state of record and prove the machine
    # counts honestly: scripted test votes with a fully attentive reviewer.
    attentive = VoterProfile(p_detect=1.0)
    test_ok = True
    for t, intents in enumerate(_TEST_INTENTS):
        stats = _drive_session(machine, election, attentive, intents, derive_seed(seed, "la-test", t))
        test_ok = test_ok and not stats.alerted and stats.on_paper == 0
        test_ok = test_ok and stats.ballot is not None and stats.ballot.disposition is Disposition.CAST
    phases.append(PhaseObservation("logic_and_accuracy_test", len(_TEST_INTENTS), 0, _active_ids(machine)))

    # Covert install from a USB stick, stick removed, machine power-cycled.
    machine.attach_media("usb-field")
    machine.install_payload(flip, "usb-field")
    machine.detach_media("usb-field")
    machine.reboot()
    persisted = any(p.payload_id == flip.payload_id for p in machine.active_software)
    phases.append(PhaseObservation("covert_install_then_reboot", 0, 0, _active_ids(machine)))

    # Election day. Observation mode: we are measuring what lands on paper,
    # not whether this particular electorate notices.
    flips_attempted = 0
    flips_on_paper = 0
    flips_cast = 0
    per_session: list[int] = []
    cast = 0
    day_flips = 0
    for index in range(10):
        intents = _population_for_experiment().intents_for(election, seed, index)
        stats = _drive_session(machine, election, _OBSERVE, intents, derive_seed(seed, "session", index))
        flips_attempted += stats.attempted
        flips_on_paper += stats.on_paper
        flips_cast += stats.on_paper
        day_flips += stats.on_paper
        per_session.append(stats.on_paper)
        cast += 1
    phases.append(PhaseObservation("election_day_voting", cast, day_flips, _active_ids(machine)))

    if window_phase:
        # Walk-up install in the middle of a live session: the payload acts
        # on the very next print, no reboot in between.
        def hook(m: Machine) -> None:
            m.attach_media("usb-field")
            m.install_payload(flip, "usb-field")
            m.detach_media("usb-field")

        stats = _drive_session(
            machine, election, _OBSERVE, _WINDOW_INTENT,
            derive_seed(seed, "window"), mid_session_hook=hook,
        )
        flips_attempted += stats.attempted
        flips_on_paper += stats.on_paper
        flips_cast += stats.on_paper
        per_session.append(stats.on_paper)
        phases.append(PhaseObservation("mid_session_install", 1, stats.on_paper, _active_ids(machine)))

        machine.reboot()
        post_flips = 0
        post_cast = 0
        for index in range(5):
            intents = _population_for_experiment().intents_for(election, seed, 100 + index)
            stats = _drive_session(
                machine, election, _OBSERVE, intents, derive_seed(seed, "session", 100 + index)
            )
            flips_attempted += stats.attempted
            flips_on_paper += stats.on_paper
            flips_cast += stats.on_paper
            per_session.append(stats.on_paper)
            post_flips += stats.on_paper
            post_cast += 1
        phases.append(PhaseObservation("post_reboot_voting", post_cast, post_flips, _active_ids(machine)))
        cast += 1 + post_cast

    mitigation = None
    if not persisted:
        mitigation = Mitigation.REBOOT.value

    result = ScenarioResult(
        machine_label=config.machine_kind.value,
        scenario_kind="vote_flip",
        seed=seed,
        flips_attempted=flips_attempted,
        flips_on_paper=flips_on_paper,
        flips_cast_undetected=flips_cast,
        detected_by=(),
        persisted_after_reboot=persisted,
        mitigation_applied=mitigation,
        ballots_cast=cast + len(_TEST_INTENTS),
        ballots_spoiled=0,
        alerts_raised=0,
        flips_per_session=tuple(per_session),
        notes=(
            _population_for_experiment().distribution_note(),
            "observation mode: p_detect forced to 0 so every flip lands on paper",
        ),
    )
    return ExperimentMachineRun(
        machine_label=config.machine_kind.value,
        pre_election_test_passed=test_ok,
        persisted_after_reboot=persisted,
        phases=tuple(phases),
        result=result,
    )


def _population_for_experiment() -> VoterPopulation:
    return VoterPopulation(count=10, profile=_OBSERVE)


def run_experiment(seed: int = 2024) -> ExperimentReport:
    """Side-by-side persistence experiment: identical malware, identical
    electorate, one machine with a persistent store and one without."""
    election = experiment_election()
    control = _run_experiment_machine(bmd_config(), election, seed, window_phase=False)
    stvm = _run_experiment_machine(stvm_config(), election, seed, window_phase=True)
    return ExperimentReport(seed=seed, control=control, stvm=stvm)


def experiment_divergences(report: ExperimentReport) -> list[str]:
    """Ways the run differed from the expected outcome; empty means the
    experiment reproduced. The expectations are behavioral, not numeric:
    exact flip counts depend on the seeded electorate."""
    problems = []
    if not report.control.pre_election_test_passed:
        problems.append("control machine failed its pre-election test")
    if not report.stvm.pre_election_test_passed:
        problems.append("stateless machine failed its pre-election test")
    if not report.control.persisted_after_reboot:
        problems.append("malware did not persist on the control machine")
    if report.control.phase("election_day_voting").flips_on_paper == 0:
        problems.append("control machine showed no flips after install and reboot")
    if report.stvm.persisted_after_reboot:
        problems.append("malware persisted across a reboot on the stateless machine")
    if report.stvm.phase("election_day_voting").flips_on_paper != 0:
        problems.append("stateless machine flipped votes after a reboot")
    if report.stvm.phase("mid_session_install").flips_on_paper == 0:
        problems.append("mid-session install produced no flip inside the no-reboot window")
    if report.stvm.phase("post_reboot_voting").flips_on_paper != 0:
        problems.append("stateless machine flipped votes after the final reboot")
    if report.stvm.phase("post_reboot_voting").active_payload_ids:
        problems.append("stateless machine still ran planted software after the final reboot")
    return problems


# ---------------------------------------------------------------------------
# Scenario documents


@dataclass(frozen=True)
class ScenarioRunSpec:
    scenario: AttackScenario
    election: ElectionDefinition
    population: VoterPopulation
    seed: int
    machine_config: MachineConfig | None
    reboot_between_voters: bool
    defenses: DefenseConfig
    machine_image: BootImage | None
    reference_digest: bytes | None


_DOC_FIELDS = {
    "kind",
    "parameters",
    "machine",
    "population",
    "seed",
    "reboot_between_voters",
    "defenses",
    "election",
    "election_file",
    "boot_image_file",
    "reference_manifest_file",
    "reference_entry",
}

_MACHINE_CONFIGS: dict[str, Callable[[], MachineConfig]] = {
    "stvm": stvm_config,
    "bmd": bmd_config,
    "bmd_networked": lambda: bmd_config(has_network_interface=True),
}


def _doc_error(path: str, message: str) -> ScenarioError:
    return ScenarioError(f"{path}: {message}")


def parse_scenario_document(text: str, base_dir: Path | None = None) -> ScenarioRunSpec:
    """Parse a scenario JSON document into a runnable spec.

    File references (election_file, boot_image_file, reference_manifest_file)
    resolve against base_dir, normally the document's own directory.
    """
    base = base_dir or Path(".")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise _doc_error("scenario", "expected a JSON object")
    unknown = sorted(set(doc) - _DOC_FIELDS)
    if unknown:
        raise _doc_error("scenario", f"unknown field '{unknown[0]}'")

    kind = doc.get("kind")
    if kind not in set(_SCENARIO_KINDS.values()):
        raise _doc_error("scenario.kind", f"unknown scenario kind {kind!r}")

    if ("election" in doc) == ("election_file" in doc):
        raise _doc_error("scenario", "exactly one of 'election' or 'election_file' is required")
    if "election" in doc:
        election = parse_election_definition(json.dumps(doc["election"]))
    else:
        election = parse_election_definition((base / doc["election_file"]).read_text("utf-8"))

    pop_doc = doc.get("population")
    if not isinstance(pop_doc, dict):
        raise _doc_error("scenario.population", "expected an object with at least 'count'")
    unknown = sorted(set(pop_doc) - {"count", "p_detect", "undervote_rate"})
    if unknown:
        raise _doc_error("scenario.population", f"unknown field '{unknown[0]}'")
    count = pop_doc.get("count")
    if not isinstance(count, int) or isinstance(count, bool):
        raise _doc_error("scenario.population.count", "expected an integer")
    p_detect = pop_doc.get("p_detect", 0.77)
    if not isinstance(p_detect, (int, float)) or isinstance(p_detect, bool):
        raise _doc_error("scenario.population.p_detect", "expected a number")
    undervote_rate = pop_doc.get("undervote_rate", 0.1)
    if not isinstance(undervote_rate, (int, float)) or isinstance(undervote_rate, bool):
        raise _doc_error("scenario.population.undervote_rate", "expected a number")
    try:
        population = VoterPopulation(
            count=count, profile=VoterProfile(p_detect=float(p_detect)),
            undervote_rate=float(undervote_rate),
        )
    except ValueError as exc:
        raise _doc_error("scenario.population", str(exc)) from exc

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise _doc_error("scenario.seed", "expected an integer")
    reboot_between = doc.get("reboot_between_voters", True)
    if not isinstance(reboot_between, bool):
        raise _doc_error("scenario.reboot_between_voters", "expected true or false")

    defenses_doc = doc.get("defenses", {})
    if not isinstance(defenses_doc, dict):
        raise _doc_error("scenario.defenses", "expected an object")
    unknown = sorted(
        set(defenses_doc) - {"verify_image_checksum", "byte_diff_on_mismatch", "reload_bios"}
    )
    if unknown:
        raise _doc_error("scenario.defenses", f"unknown field '{unknown[0]}'")
    for key, value in defenses_doc.items():
        if not isinstance(value, bool):
            raise _doc_error(f"scenario.defenses.{key}", "expected true or false")
    defenses = DefenseConfig(**defenses_doc)

    machine_image: BootImage | None = None
    reference_digest: bytes | None = None
    if "boot_image_file" in doc:
        image_path = base / doc["boot_image_file"]
        content = image_path.read_bytes()
        machine_image = BootImage(
            image_id=image_path.name,
            content=content,
            declared_checksum=content_digest(content),
        )
    if "reference_manifest_file" in doc:
        manifest = parse_manifest((base / doc["reference_manifest_file"]).read_text("utf-8"))
        entry = doc.get("reference_entry")
        if entry is None:
            if len(manifest) != 1:
                raise _doc_error(
                    "scenario.reference_entry",
                    "manifest holds several entries; name the one to verify against",
                )
            reference_digest = next(iter(manifest.values()))
        else:
            if entry not in manifest:
                raise _doc_error("scenario.reference_entry", f"no manifest entry '{entry}'")
            reference_digest = manifest[entry]

    params = doc.get("parameters", {})
    if not isinstance(params, dict):
        raise _doc_error("scenario.parameters", "expected an object")

    hmpb = kind in ("hmpb_undervote", "hmpb_overvote")
    machine_config: MachineConfig | None = None
    if hmpb:
        if "machine" in doc:
            raise _doc_error("scenario.machine", "hand-marked scenarios take no machine")
    else:
        machine_name = doc.get("machine", "stvm")
        if machine_name not in _MACHINE_CONFIGS:
            raise _doc_error("scenario.machine", f"unknown machine {machine_name!r}")
        machine_config = _MACHINE_CONFIGS[machine_name]()

    scenario = _scenario_from_params(kind, params, election, machine_image)
    return ScenarioRunSpec(
        scenario=scenario,
        election=election,
        population=population,
        seed=seed,
        machine_config=machine_config,
        reboot_between_voters=reboot_between,
        defenses=defenses,
        machine_image=None if isinstance(scenario, BdrSwap) else machine_image,
        reference_digest=reference_digest,
    )


def _param_str(params: dict, name: str, kind: str) -> str:
    value = params.get(name)
    if not isinstance(value, str) or not value:
        raise _doc_error(f"scenario.parameters.{name}", f"required by {kind}, expected a string")
    return value


def _check_params(params: dict, allowed: set[str], kind: str) -> None:
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise _doc_error("scenario.parameters", f"unknown field '{unknown[0]}' for {kind}")


def _scenario_from_params(
    kind: str, params: dict, election: ElectionDefinition, machine_image: BootImage | None
) -> AttackScenario:
    if kind == "vote_flip":
        _check_params(
            params,
            {"target_contest", "mapping", "install_time", "route", "detach_after_install"},
            kind,
        )
        mapping = params.get("mapping")
        if not isinstance(mapping, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in mapping.items()
        ):
            raise _doc_error("scenario.parameters.mapping", "expected an object of strings")
        try:
            install_time = InstallTime(params.get("install_time", "pre_election"))
        except ValueError:
            raise _doc_error("scenario.parameters.install_time", "unknown install time") from None
        try:
            route = InstallRoute(params.get("route", "usb"))
        except ValueError:
            raise _doc_error("scenario.parameters.route", "unknown route") from None
        detach = params.get("detach_after_install", True)
        if not isinstance(detach, bool):
            raise _doc_error("scenario.parameters.detach_after_install", "expected true or false")
        return vote_flip(
            _param_str(params, "target_contest", kind), mapping, install_time, route, detach
        )
    if kind == "dos_wipe":
        _check_params(params, {"trigger_time"}, kind)
        try:
            trigger = InstallTime(params.get("trigger_time", "during_voting"))
        except ValueError:
            raise _doc_error("scenario.parameters.trigger_time", "unknown trigger time") from None
        return DoSWipe(trigger_time=trigger)
    if kind == "remote_control":
        _check_params(params, set(), kind)
        return RemoteControl()
    if kind == "bdr_swap":
        _check_params(params, {"graft_flip"}, kind)
        graft = params.get("graft_flip")
        if graft is not None:
            if not isinstance(graft, dict):
                raise _doc_error("scenario.parameters.graft_flip", "expected an object")
            _check_params(graft, {"target_contest", "mapping"}, "graft_flip")
            target = graft.get("target_contest")
            mapping = graft.get("mapping")
            if not isinstance(target, str) or not target:
                raise _doc_error("scenario.parameters.graft_flip.target_contest", "expected a string")
            if not isinstance(mapping, dict):
                raise _doc_error("scenario.parameters.graft_flip.mapping", "expected an object")
            flip = vote_flip(target, mapping, InstallTime.PRE_ELECTION, InstallRoute.IMAGE_SWAP)
            payload = _flip_payload(flip, election)
            base = build_base_image(f"{election.election_id}-disc")
            return BdrSwap(modified_image=graft_payload_into_image(base, payload))
        if machine_image is not None:
            return BdrSwap(modified_image=machine_image)
        raise _doc_error(
            "scenario.parameters", "bdr_swap needs either graft_flip or boot_image_file"
        )
    if kind == "physical_tamper":
        _check_params(params, set(), kind)
        return PhysicalTamperFlag()
    if kind == "hmpb_undervote":
        _check_params(params, {"contest", "insider_choice"}, kind)
        return HmpbUndervoteHack(
            contest_id=_param_str(params, "contest", kind),
            insider_choice=_param_str(params, "insider_choice", kind),
        )
    _check_params(params, {"contest", "insider_choice"}, kind)
    return HmpbOvervoteHack(
        contest_id=_param_str(params, "contest", kind),
        insider_choice=_param_str(params, "insider_choice", kind),
    )


def run_scenario_spec(spec: ScenarioRunSpec) -> ScenarioResult:
    if isinstance(spec.scenario, (HmpbUndervoteHack, HmpbOvervoteHack)):
        return run_hmpb_baseline(spec.scenario, spec.population, spec.election, spec.seed)
    assert spec.machine_config is not None
    return run_scenario(
        spec.machine_config,
        spec.scenario,
        spec.population,
        spec.election,
        spec.seed,
        reboot_between_voters=spec.reboot_between_voters,
        defenses=spec.defenses,
        machine_image=spec.machine_image,
        reference_digest=spec.reference_digest,
    )
