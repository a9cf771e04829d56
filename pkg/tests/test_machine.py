import hashlib
import random
from dataclasses import replace

import pytest

from stvmsim.machine import (
    BootSource,
    ChecksumVerdict,
    Machine,
    MachineKind,
    MachineConfig,
    MediaError,
    NetworkRefusedError,
    PowerStateError,
    StorageError,
    bmd_config,
    boot,
    build_base_image,
    byte_diff,
    connect_network,
    content_digest,
    detach_media,
    extract_grafted_payloads,
    format_manifest,
    genuine_image,
    graft_payload_into_image,
    inert_payload,
    install_payload,
    install_via_network,
    attach_media,
    implant_bios,
    make_machine_state,
    parse_manifest,
    payload_from_json_dict,
    payload_to_json_dict,
    reboot,
    reload_bios,
    stvm_config,
    swap_payload,
    trigger_wipe,
    verify_checksum,
    wipe_payload,
    ManifestError,
)


# -- configuration invariants -------------------------------------------------


def test_stvm_config_invariants():
    config = stvm_config()
    assert config.machine_kind is MachineKind.STATELESS_STVM
    assert not config.has_persistent_store
    assert not config.has_network_interface
    assert config.boot_source is BootSource.READ_ONLY_IMAGE


def test_stvm_cannot_have_store_or_network_or_disk_boot():
    with pytest.raises(StorageError):
        MachineConfig(MachineKind.STATELESS_STVM, True, False, BootSource.READ_ONLY_IMAGE)
    with pytest.raises(StorageError):
        MachineConfig(MachineKind.STATELESS_STVM, False, True, BootSource.READ_ONLY_IMAGE)
    with pytest.raises(StorageError):
        MachineConfig(MachineKind.STATELESS_STVM, False, False, BootSource.PERSISTENT_STORE)


def test_bmd_requires_store_and_boots_from_it():
    with pytest.raises(StorageError):
        MachineConfig(MachineKind.STATEFUL_BMD, False, False, BootSource.PERSISTENT_STORE)
    with pytest.raises(StorageError):
        MachineConfig(MachineKind.STATEFUL_BMD, True, False, BootSource.READ_ONLY_IMAGE)


# -- boot and reboot -----------------------------------------------------------


def test_boot_clears_volatile_and_requires_power_off():
    state = make_machine_state(stvm_config(), build_base_image("d"))
    state = boot(state)
    assert state.powered
    assert state.volatile_payloads == ()
    with pytest.raises(PowerStateError):
        boot(state)


def test_reboot_requires_power():
    state = make_machine_state(stvm_config(), build_base_image("d"))
    with pytest.raises(PowerStateError):
        reboot(state)


def test_stvm_reboot_drops_installed_payload():
    state = boot(make_machine_state(stvm_config(), build_base_image("d")))
    state = attach_media(state, "usb")
    state = install_payload(state, inert_payload("p"), "usb")
    assert [p.payload_id for p in state.active_software] == ["p"]
    assert [p.payload_id for p in state.volatile_payloads] == ["p"]
    state = reboot(state)
    assert state.active_software == ()
    assert state.volatile_payloads == ()


def test_bmd_reboot_keeps_installed_payload():
    state = boot(make_machine_state(bmd_config(), build_base_image("d")))
    state = attach_media(state, "usb")
    state = install_payload(state, inert_payload("p"), "usb")
    assert [p.payload_id for p in state.persistent_payloads] == ["p"]
    state = reboot(state)
    assert [p.payload_id for p in state.active_software] == ["p"]


def test_reboot_preserves_attached_media():
    state = boot(make_machine_state(stvm_config(), build_base_image("d")))
    state = attach_media(state, "usb")
    state = reboot(state)
    assert state.attached_media == frozenset({"usb"})


# -- media and install preconditions -------------------------------------------


def test_attach_requires_power():
    state = make_machine_state(stvm_config(), build_base_image("d"))
    with pytest.raises(PowerStateError):
        attach_media(state, "usb")


def test_detach_requires_attached():
    state = boot(make_machine_state(stvm_config(), build_base_image("d")))
    with pytest.raises(MediaError, match="usb"):
        detach_media(state, "usb")


def test_install_requires_media():
    state = boot(make_machine_state(stvm_config(), build_base_image("d")))
    with pytest.raises(MediaError):
        install_payload(state, inert_payload("p"), "usb")


def test_install_takes_effect_immediately():
    state = boot(make_machine_state(stvm_config(), build_base_image("d")))
    state = attach_media(state, "usb")
    state = install_payload(state, inert_payload("p"), "usb")
    assert any(p.payload_id == "p" for p in state.active_software)


# -- BIOS rules -----------------------------------------------------------------


def test_reload_bios_only_when_off():
    state = boot(make_machine_state(stvm_config(), build_base_image("d")))
    with pytest.raises(PowerStateError, match="powered off"):
        reload_bios(state)


def test_reload_bios_discards_implant():
    state = make_machine_state(stvm_config(), build_base_image("d"))
    state = implant_bios(state, inert_payload("rogue-fw"))
    assert state.bios.firmware_payload is not None
    state = reload_bios(state)
    assert state.bios.firmware_payload is None


def test_bios_implant_survives_reboot_until_reload():
    state = make_machine_state(stvm_config(), build_base_image("d"))
    state = implant_bios(state, inert_payload("rogue-fw"))
    state = boot(state)
    assert any(p.payload_id == "rogue-fw" for p in state.active_software)
    state = reboot(state)
    assert any(p.payload_id == "rogue-fw" for p in state.active_software)


# -- network --------------------------------------------------------------------


def test_connect_refused_without_interface():
    state = boot(make_machine_state(stvm_config(), build_base_image("d")))
    with pytest.raises(NetworkRefusedError):
        connect_network(state)
    with pytest.raises(NetworkRefusedError):
        install_via_network(state, inert_payload("p"))


def test_networked_machine_accepts_delivery():
    state = boot(make_machine_state(bmd_config(has_network_interface=True), build_base_image("d")))
    state = install_via_network(state, inert_payload("p"))
    assert any(p.payload_id == "p" for p in state.persistent_payloads)


# -- wipe -----------------------------------------------------------------------


def test_wipe_on_stvm_destroys_nothing():
    state = boot(make_machine_state(stvm_config(), build_base_image("d")))
    state, destroyed = trigger_wipe(state)
    assert destroyed == 0
    assert not state.powered
    # service restored by a plain reboot
    assert boot(state).powered


def test_wipe_on_bmd_destroys_store_and_blocks_boot():
    state = boot(make_machine_state(bmd_config(), build_base_image("d")))
    state = attach_media(state, "usb")
    state = install_payload(state, wipe_payload("w"), "usb")
    state, destroyed = trigger_wipe(state)
    assert destroyed == 1
    with pytest.raises(StorageError, match="wiped"):
        boot(state)


# -- checksums and diffs ----------------------------------------------------------


def test_verify_checksum_against_independent_digest():
    image = build_base_image("d")
    # reference digest computed here, not by the module under test
    reference = hashlib.sha256(image.content).digest()
    assert verify_checksum(image, reference) is ChecksumVerdict.MATCH
    tampered = genuine_image("d2", image.content + b"!")
    assert verify_checksum(tampered, reference) is ChecksumVerdict.MISMATCH


def test_declared_checksum_is_not_trusted():
    # a counterfeit image declaring its own (correct-for-itself) checksum
    # still fails against the officials' reference
    image = build_base_image("d")
    reference = content_digest(image.content)
    fake = genuine_image("fake", image.content + b"evil")
    assert fake.declared_checksum == content_digest(fake.content)
    assert verify_checksum(fake, reference) is ChecksumVerdict.MISMATCH


def test_byte_diff_hand_computed():
    a = b"abcdef"
    b = b"abXdeZ"
    diffs = byte_diff(a, b)
    assert [(d.offset, d.byte_a, d.byte_b) for d in diffs] == [
        (2, ord("c"), ord("X")),
        (5, ord("f"), ord("Z")),
    ]


def test_byte_diff_length_mismatch():
    diffs = byte_diff(b"abc", b"abcXY")
    assert [(d.offset, d.byte_a, d.byte_b) for d in diffs] == [
        (3, None, ord("X")),
        (4, None, ord("Y")),
    ]


def test_byte_diff_equal_is_empty():
    assert byte_diff(b"same", b"same") == ()


def test_byte_diff_offsets_ascending_fuzz():
    rng = random.Random(31337)
    base = bytes(rng.randrange(256) for _ in range(512))
    for _ in range(50):
        mutated = bytearray(base)
        for _ in range(rng.randrange(1, 6)):
            mutated[rng.randrange(len(base))] ^= 0xFF
        offsets = [d.offset for d in byte_diff(base, bytes(mutated))]
        assert offsets == sorted(offsets)
        assert all(base[o] != mutated[o] for o in offsets)


# -- manifests ---------------------------------------------------------------------


def test_manifest_round_trip():
    entries = {"voting.img": content_digest(b"x"), "recovery.img": content_digest(b"y")}
    text = format_manifest(entries)
    assert parse_manifest(text) == entries
    # conventional "<digest><two spaces><name>" lines
    first = text.splitlines()[0]
    assert first == f"{content_digest(b'y').hex()}  recovery.img"


def test_manifest_rejects_bad_lines():
    with pytest.raises(ManifestError, match="line 1"):
        parse_manifest("nonsense\n")
    with pytest.raises(ManifestError, match="hexadecimal"):
        parse_manifest("zz  file.img\n")
    with pytest.raises(ManifestError, match="32 bytes"):
        parse_manifest("abcd  file.img\n")


# -- grafted images ------------------------------------------------------------------


def test_graft_round_trip_and_checksum_change():
    image = build_base_image("d")
    payload = swap_payload("flip", "mayor", "a", "b")
    evil = graft_payload_into_image(image, payload)
    assert extract_grafted_payloads(image.content) == ()
    assert extract_grafted_payloads(evil.content) == (payload,)
    assert verify_checksum(evil, content_digest(image.content)) is ChecksumVerdict.MISMATCH
    # the graft only appends; the genuine prefix is untouched
    assert evil.content.startswith(image.content)


def test_grafted_payload_active_after_boot():
    payload = swap_payload("flip", "mayor", "a", "b")
    evil = graft_payload_into_image(build_base_image("d"), payload)
    state = boot(make_machine_state(stvm_config(), evil))
    assert any(p.payload_id == "flip" for p in state.active_software)
    # and it comes back after every reboot: it lives on the disc
    state = reboot(state)
    assert any(p.payload_id == "flip" for p in state.active_software)


def test_payload_json_round_trip():
    for payload in (
        swap_payload("flip", "mayor", "a", "b"),
        wipe_payload("w"),
        inert_payload("i"),
    ):
        assert payload_from_json_dict(payload_to_json_dict(payload)) == payload


def test_payload_json_validation():
    with pytest.raises(ValueError, match="payload_id"):
        payload_from_json_dict({"effect": {"kind": "inert"}})
    with pytest.raises(ValueError, match="unknown kind"):
        payload_from_json_dict({"payload_id": "x", "effect": {"kind": "ransom"}})
    with pytest.raises(ValueError, match="mapping"):
        payload_from_json_dict(
            {"payload_id": "x", "effect": {"kind": "selection_transform", "contest_id": "m"}}
        )


# -- the statelessness property, spot check (the full 10k-run version lives
#    in the acceptance suite) -----------------------------------------------


def test_boot_actions_reboot_equals_boot_reboot():
    base = make_machine_state(stvm_config(), build_base_image("d"))
    clean = reboot(boot(base))

    state = boot(base)
    state = attach_media(state, "usb-1")
    state = install_payload(state, inert_payload("p1"), "usb-1")
    state = install_payload(state, swap_payload("p2", "m", "a", "b"), "usb-1")
    state = reboot(state)

    assert replace(state, attached_media=frozenset()) == replace(
        clean, attached_media=frozenset()
    )


def test_machine_handle_tracks_boot_epoch():
    machine = Machine(make_machine_state(stvm_config(), build_base_image("d")))
    assert machine.boot_epoch == 0
    machine.boot()
    assert machine.boot_epoch == 1
    machine.reboot()
    assert machine.boot_epoch == 2
