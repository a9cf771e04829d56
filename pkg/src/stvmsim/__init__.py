"""Deterministic voting-machine simulator.

The package models two machine architectures side by side: a conventional
ballot-marking device that boots from a writable drive, and a stateless
machine that boots a read-only image, holds no drive, and prints each
contest line for the voter to verify before moving on. Around that core sit
an attack harness, tabulation, a ballot-polling audit, a command line, and
an HTTP service for interactive sessions.
"""

from .ballot import (
    Candidate,
    Contest,
    ElectionDefinition,
    InvalidSelectionError,
    SelectionSet,
    SelectionVerdict,
    VerdictKind,
    make_selection_set,
    parse_election_definition,
    render_selection_text,
    serialize_election_definition,
    validate_selection,
)
from .machine import (
    BiosSlot,
    BootImage,
    BootSource,
    Machine,
    MachineConfig,
    MachineKind,
    MachineState,
    Payload,
    bmd_config,
    boot,
    byte_diff,
    genuine_image,
    install_payload,
    make_machine_state,
    reboot,
    reload_bios,
    stvm_config,
    verify_checksum,
)
from .printer import Disposition, PaperBallot, PrintedLine, PrintLog, finalize_ballot
from .session import (
    P_DETECT_ERROR_BASELINE,
    P_DETECT_REVIEW,
    P_DETECT_TRANSPARENT,
    PhaseKind,
    SessionPhase,
    VoterProfile,
    VotingSession,
    start_session,
)
from .attacks import (
    AttackScenario,
    BdrSwap,
    DefenseConfig,
    DoSWipe,
    HmpbOvervoteHack,
    HmpbUndervoteHack,
    PhysicalTamperFlag,
    RemoteControl,
    ScenarioResult,
    VoteFlip,
    VoterPopulation,
    run_experiment,
    run_hmpb_baseline,
    run_scenario,
    vote_flip,
)
from .tally import (
    AuditOutcome,
    AuditPlan,
    AuditResult,
    TabulationResult,
    bravo_audit,
    detection_probability,
    monte_carlo_detection,
    tabulate,
)

__version__ = "0.1.0"
