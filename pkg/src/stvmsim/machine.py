"""Layered-storage model of a voting computer.

A machine is its storage layers. What an attack can change, and whether the
change survives a reboot, falls out of which layer it lives in:

  boot image        read-only once burned; swapping the disc is the only write
  BIOS slot         rewritable only while the machine is powered off
  volatile memory   anything installed at runtime on a machine with no drive
  persistent store  runtime installs on a machine that has a drive

The stateless kind has no persistent store and boots from the read-only
image, so a reboot reconstructs the exact same software state every time.
The stateful kind boots whatever its drive holds, so runtime installs stick.

All transition functions here are pure: old state in, new state out. The
`Machine` class at the bottom is a thin single-owner handle for callers that
need a live, rebootable machine (voting sessions, the HTTP service).
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

DIGEST_BYTES = 32


def content_digest(content: bytes) -> bytes:
    return hashlib.sha256(content).digest()


class MachineError(RuntimeError):
    """Base class for machine-model violations."""


class PowerStateError(MachineError):
    pass


class MediaError(MachineError):
    pass


class StorageError(MachineError):
    pass


class NetworkRefusedError(MachineError):
    """The machine has no network interface. This error is the defense."""


class EffectKind(Enum):
    SELECTION_TRANSFORM = "selection_transform"
    WIPE_AND_SHUTDOWN = "wipe_and_shutdown"
    INERT = "inert"


@dataclass(frozen=True)
class PayloadEffect:
    kind: EffectKind
    contest_id: str | None = None
    # candidate_id -> candidate_id, total over the contest's candidates
    mapping: tuple[tuple[str, str], ...] | None = None

    def mapping_dict(self) -> dict[str, str]:
        return dict(self.mapping or ())


@dataclass(frozen=True)
class Payload:
    payload_id: str
    effect: PayloadEffect


def selection_transform_payload(
    payload_id: str, contest_id: str, mapping: Mapping[str, str]
) -> Payload:
    effect = PayloadEffect(
        kind=EffectKind.SELECTION_TRANSFORM,
        contest_id=contest_id,
        mapping=tuple(sorted(mapping.items())),
    )
    return Payload(payload_id=payload_id, effect=effect)


def swap_payload(payload_id: str, contest_id: str, a: str, b: str) -> Payload:
    """Transform that exchanges two candidates and leaves the rest alone."""
    return selection_transform_payload(payload_id, contest_id, {a: b, b: a})


def wipe_payload(payload_id: str) -> Payload:
    return Payload(payload_id=payload_id, effect=PayloadEffect(kind=EffectKind.WIPE_AND_SHUTDOWN))


def inert_payload(payload_id: str) -> Payload:
    return Payload(payload_id=payload_id, effect=PayloadEffect(kind=EffectKind.INERT))


def payload_to_json_dict(payload: Payload) -> dict:
    effect: dict = {"kind": payload.effect.kind.value}
    if payload.effect.kind is EffectKind.SELECTION_TRANSFORM:
        effect["contest_id"] = payload.effect.contest_id
        effect["mapping"] = payload.effect.mapping_dict()
    return {"payload_id": payload.payload_id, "effect": effect}


def payload_from_json_dict(data: dict) -> Payload:
    if not isinstance(data, dict):
        raise ValueError(f"payload: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - {"payload_id", "effect"})
    if unknown:
        raise ValueError(f"payload: unknown field '{unknown[0]}'")
    payload_id = data.get("payload_id")
    if not isinstance(payload_id, str) or not payload_id:
        raise ValueError("payload.payload_id: expected a non-empty string")
    effect = data.get("effect")
    if not isinstance(effect, dict):
        raise ValueError("payload.effect: expected an object")
    kind_value = effect.get("kind")
    try:
        kind = EffectKind(kind_value)
    except ValueError:
        raise ValueError(f"payload.effect.kind: unknown kind {kind_value!r}") from None
    if kind is EffectKind.SELECTION_TRANSFORM:
        contest_id = effect.get("contest_id")
        mapping = effect.get("mapping")
        if not isinstance(contest_id, str) or not contest_id:
            raise ValueError("payload.effect.contest_id: expected a non-empty string")
        if not isinstance(mapping, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in mapping.items()
        ):
            raise ValueError("payload.effect.mapping: expected an object of strings")
        return selection_transform_payload(payload_id, contest_id, mapping)
    return Payload(payload_id=payload_id, effect=PayloadEffect(kind=kind))


@dataclass(frozen=True)
class BiosSlot:
    firmware_payload: Payload | None = None


class MachineKind(Enum):
    STATEFUL_BMD = "stateful_bmd"
    STATELESS_STVM = "stateless_stvm"


class BootSource(Enum):
    PERSISTENT_STORE = "persistent_store"
    READ_ONLY_IMAGE = "read_only_image"


@dataclass(frozen=True)
class MachineConfig:
    machine_kind: MachineKind
    has_persistent_store: bool
    has_network_interface: bool
    boot_source: BootSource

    def __post_init__(self) -> None:
        if self.machine_kind is MachineKind.STATELESS_STVM:
            if self.has_persistent_store:
                raise StorageError("stateless machine cannot have a persistent store")
            if self.has_network_interface:
                raise StorageError("stateless machine cannot have a network interface")
            if self.boot_source is not BootSource.READ_ONLY_IMAGE:
                raise StorageError("stateless machine must boot from the read-only image")
        else:
            if not self.has_persistent_store:
                raise StorageError("stateful machine requires a persistent store")
            if self.boot_source is not BootSource.PERSISTENT_STORE:
                raise StorageError("stateful machine boots from its persistent store")


def stvm_config() -> MachineConfig:
    return MachineConfig(
        machine_kind=MachineKind.STATELESS_STVM,
        has_persistent_store=False,
        has_network_interface=False,
        boot_source=BootSource.READ_ONLY_IMAGE,
    )


def bmd_config(has_network_interface: bool = False) -> MachineConfig:
    return MachineConfig(
        machine_kind=MachineKind.STATEFUL_BMD,
        has_persistent_store=True,
        has_network_interface=has_network_interface,
        boot_source=BootSource.PERSISTENT_STORE,
    )


@dataclass(frozen=True)
class BootImage:
    image_id: str
    content: bytes
    declared_checksum: bytes

    def __post_init__(self) -> None:
        if len(self.declared_checksum) != DIGEST_BYTES:
            raise StorageError(
                f"declared checksum must be {DIGEST_BYTES} bytes, "
                f"got {len(self.declared_checksum)}"
            )


def genuine_image(image_id: str, content: bytes) -> BootImage:
    return BootImage(image_id=image_id, content=content, declared_checksum=content_digest(content))


def build_base_image(image_id: str, block_count: int = 64) -> BootImage:
    """Deterministic stand-in for an OS-plus-voting-software disc image."""
    content = b"".join(
        b"OSBLOCK %06d SYSTEM AND VOTING SOFTWARE\n" % i for i in range(block_count)
    )
    return genuine_image(image_id, content)


# A modified disc carries its malware inside the image content itself; the
# marker format below is how the simulator encodes "this build of the OS has
# extra code in it" while keeping images plain bytes that checksum and diff
# like any other file.
_GRAFT_OPEN = b"\n#GRAFT#"
_GRAFT_CLOSE = b"#TFARG#\n"
_GRAFT_RE = re.compile(re.escape(_GRAFT_OPEN) + b"(.*?)" + re.escape(_GRAFT_CLOSE), re.DOTALL)


def graft_payload_into_image(image: BootImage, payload: Payload, image_id: str | None = None) -> BootImage:
    """Build a tampered copy of an image with a payload baked into its bytes.

    The copy declares a checksum matching its own content, the way a
    counterfeit disc would ship with a plausible-looking label. Detection has
    to come from comparing against an independently held reference digest.
    """
    blob = json.dumps(payload_to_json_dict(payload), sort_keys=True).encode("utf-8")
    if _GRAFT_CLOSE in blob:
        raise StorageError("payload serialization collides with graft marker")
    content = image.content + _GRAFT_OPEN + blob + _GRAFT_CLOSE
    return genuine_image(image_id or f"{image.image_id}+graft", content)


def extract_grafted_payloads(content: bytes) -> tuple[Payload, ...]:
    payloads = []
    for match in _GRAFT_RE.finditer(content):
        payloads.append(payload_from_json_dict(json.loads(match.group(1).decode("utf-8"))))
    return tuple(payloads)


@dataclass(frozen=True)
class MachineState:
    config: MachineConfig
    boot_image: BootImage
    bios: BiosSlot = field(default_factory=BiosSlot)
    volatile_payloads: tuple[Payload, ...] = ()
    persistent_payloads: tuple[Payload, ...] | None = None
    powered: bool = False
    active_software: tuple[Payload, ...] = ()
    attached_media: frozenset[str] = frozenset()
    persistent_store_intact: bool = True

    def __post_init__(self) -> None:
        if self.config.has_persistent_store and self.persistent_payloads is None:
            object.__setattr__(self, "persistent_payloads", ())
        if not self.config.has_persistent_store and self.persistent_payloads is not None:
            raise StorageError("machine without a persistent store cannot hold persistent payloads")


def make_machine_state(
    config: MachineConfig, image: BootImage, bios: BiosSlot | None = None
) -> MachineState:
    return MachineState(config=config, boot_image=image, bios=bios or BiosSlot())


def _software_after_boot(state: MachineState) -> tuple[Payload, ...]:
    active: list[Payload] = []
    if state.bios.firmware_payload is not None:
        active.append(state.bios.firmware_payload)
    if state.config.boot_source is BootSource.READ_ONLY_IMAGE:
        active.extend(extract_grafted_payloads(state.boot_image.content))
    else:
        active.extend(state.persistent_payloads or ())
    return tuple(active)


def boot(state: MachineState) -> MachineState:
    """Power on. Volatile memory starts empty; what runs is whatever the
    boot source holds, plus any firmware sitting in the BIOS slot."""
    if state.powered:
        raise PowerStateError("machine is already powered on")
    if (
        state.config.boot_source is BootSource.PERSISTENT_STORE
        and not state.persistent_store_intact
    ):
        raise StorageError("persistent store is wiped; machine cannot boot")
    cleared = replace(state, volatile_payloads=(), active_software=())
    return replace(cleared, powered=True, active_software=_software_after_boot(cleared))


def power_off(state: MachineState) -> MachineState:
    if not state.powered:
        raise PowerStateError("machine is already powered off")
    return replace(state, powered=False, volatile_payloads=(), active_software=())


def reboot(state: MachineState) -> MachineState:
    """Power-cycle. Everything volatile is gone; see boot() for what returns."""
    return boot(power_off(state))


def attach_media(state: MachineState, media_id: str) -> MachineState:
    if not state.powered:
        raise PowerStateError("cannot attach media to a powered-off machine")
    return replace(state, attached_media=state.attached_media | {media_id})


def detach_media(state: MachineState, media_id: str) -> MachineState:
    if media_id not in state.attached_media:
        raise MediaError(f"media '{media_id}' is not attached")
    return replace(state, attached_media=state.attached_media - {media_id})


def install_payload(state: MachineState, payload: Payload, via_media: str) -> MachineState:
    """Run an installer from attached media. Where the payload lands depends
    on the hardware: a drive makes it persistent, otherwise it lives in
    volatile memory until the next power cycle. Either way it takes effect
    immediately."""
    if not state.powered:
        raise PowerStateError("cannot install on a powered-off machine")
    if via_media not in state.attached_media:
        raise MediaError(f"media '{via_media}' is not attached")
    new = replace(state, active_software=state.active_software + (payload,))
    if state.config.has_persistent_store:
        return replace(new, persistent_payloads=(state.persistent_payloads or ()) + (payload,))
    return replace(new, volatile_payloads=state.volatile_payloads + (payload,))


def reload_bios(state: MachineState, firmware: BiosSlot | None = None) -> MachineState:
    """Reflash the BIOS from trusted read-only media. Physical access to a
    powered-off machine is required; a running machine cannot do this."""
    if state.powered:
        raise PowerStateError("BIOS can only be reloaded while powered off")
    return replace(state, bios=firmware or BiosSlot())


def implant_bios(state: MachineState, payload: Payload) -> MachineState:
    """Adversarial counterpart of reload_bios: persist firmware malware."""
    if state.powered:
        raise PowerStateError("BIOS can only be written while powered off")
    return replace(state, bios=BiosSlot(firmware_payload=payload))


def swap_boot_image(state: MachineState, image: BootImage) -> MachineState:
    if state.powered:
        raise PowerStateError("cannot swap boot media while powered on")
    return replace(state, boot_image=image)


def trigger_wipe(state: MachineState) -> tuple[MachineState, int]:
    """A wipe-and-shutdown payload fires: destroy whatever storage the
    hardware offers, then power down. Returns the count of destroyed
    persistent payloads; a machine with no store has nothing to delete."""
    if not state.powered:
        raise PowerStateError("machine is not running")
    destroyed = len(state.persistent_payloads or ())
    new = replace(state, powered=False, volatile_payloads=(), active_software=())
    if state.config.has_persistent_store:
        new = replace(new, persistent_payloads=(), persistent_store_intact=False)
    return new, destroyed


def connect_network(state: MachineState) -> MachineState:
    if not state.config.has_network_interface:
        raise NetworkRefusedError("no network interface present; connection refused")
    return state


def install_via_network(state: MachineState, payload: Payload) -> MachineState:
    """Remote payload delivery; possible exactly when a network interface
    exists, which is why the machines under study do not have one."""
    state = connect_network(state)
    if not state.powered:
        raise PowerStateError("cannot deliver to a powered-off machine")
    new = replace(state, active_software=state.active_software + (payload,))
    if state.config.has_persistent_store:
        return replace(new, persistent_payloads=(state.persistent_payloads or ()) + (payload,))
    return replace(new, volatile_payloads=state.volatile_payloads + (payload,))


class ChecksumVerdict(Enum):
    MATCH = "match"
    MISMATCH = "mismatch"


def verify_checksum(image: BootImage, reference_digest: bytes) -> ChecksumVerdict:
    """Compare an image's actual content digest against an independently
    obtained reference. The checksum printed on the disc is not trusted."""
    if len(reference_digest) != DIGEST_BYTES:
        raise ValueError(f"reference digest must be {DIGEST_BYTES} bytes")
    if content_digest(image.content) == reference_digest:
        return ChecksumVerdict.MATCH
    return ChecksumVerdict.MISMATCH


@dataclass(frozen=True)
class ByteDifference:
    offset: int
    byte_a: int | None
    byte_b: int | None


def byte_diff(a: bytes, b: bytes) -> tuple[ByteDifference, ...]:
    """Positions where two images differ, ascending. Length mismatches show
    up as differences with None on the shorter side."""
    diffs = []
    for offset in range(max(len(a), len(b))):
        byte_a = a[offset] if offset < len(a) else None
        byte_b = b[offset] if offset < len(b) else None
        if byte_a != byte_b:
            diffs.append(ByteDifference(offset=offset, byte_a=byte_a, byte_b=byte_b))
    return tuple(diffs)


class ManifestError(ValueError):
    pass


def format_manifest(entries: Mapping[str, bytes]) -> str:
    """Checksum manifest in the conventional two-space digest format."""
    return "".join(f"{digest.hex()}  {name}\n" for name, digest in sorted(entries.items()))


def parse_manifest(text: str) -> dict[str, bytes]:
    entries: dict[str, bytes] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("  ", 1)
        if len(parts) != 2 or not parts[1]:
            raise ManifestError(f"line {lineno}: expected '<hex digest>  <file>'")
        hex_digest, name = parts
        try:
            digest = bytes.fromhex(hex_digest)
        except ValueError:
            raise ManifestError(f"line {lineno}: digest is not hexadecimal") from None
        if len(digest) != DIGEST_BYTES:
            raise ManifestError(f"line {lineno}: digest must be {DIGEST_BYTES} bytes")
        entries[name.strip()] = digest
    return entries


class Machine:
    """Single-owner mutable handle over the pure state transitions.

    Voting sessions hold a reference to this so that software installed
    mid-session is visible to the session's next print, and so a reboot by
    the operator is visible to every session. boot_epoch increments on each
    boot; sessions use it to notice that the machine restarted under them.
    """

    def __init__(self, state: MachineState):
        self.state = state
        self.boot_epoch = 0

    @property
    def powered(self) -> bool:
        return self.state.powered

    @property
    def active_software(self) -> tuple[Payload, ...]:
        return self.state.active_software

    def boot(self) -> None:
        self.state = boot(self.state)
        self.boot_epoch += 1

    def power_off(self) -> None:
        self.state = power_off(self.state)

    def reboot(self) -> None:
        self.state = reboot(self.state)
        self.boot_epoch += 1

    def attach_media(self, media_id: str) -> None:
        self.state = attach_media(self.state, media_id)

    def detach_media(self, media_id: str) -> None:
        self.state = detach_media(self.state, media_id)

    def install_payload(self, payload: Payload, via_media: str) -> None:
        self.state = install_payload(self.state, payload, via_media)

    def install_via_network(self, payload: Payload) -> None:
        self.state = install_via_network(self.state, payload)

    def reload_bios(self, firmware: BiosSlot | None = None) -> None:
        self.state = reload_bios(self.state, firmware)

    def implant_bios(self, payload: Payload) -> None:
        self.state = implant_bios(self.state, payload)

    def swap_boot_image(self, image: BootImage) -> None:
        self.state = swap_boot_image(self.state, image)

    def trigger_wipe(self) -> int:
        self.state, destroyed = trigger_wipe(self.state)
        return destroyed
