import copy

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epochfpga.bitcodec import (
    BlockType,
    ElementKind,
    Frame,
    FrameAddress,
    LogicLocationEntry,
    far_decode,
    far_encode,
)
from epochfpga.demo import bench_device, demo_cell_map, demo_geometry
from epochfpga.epochctl import build_readback_sequence, build_write_sequence, readback_template
from epochfpga.errors import (
    CellOutsideGeometry,
    ConfigFileError,
    CountMismatch,
    CrcMismatch,
    IdcodeMismatch,
    InvalidCellBinding,
    InvalidFrameAddress,
    MissingPaddingFrame,
    NotSynced,
    OrphanType2,
    ReadbackNotArmed,
    WriteWhileNotWcfg,
)
from epochfpga.fabricsim import (
    BRAM_READBACK_MARKER_BIT,
    BRAM_READBACK_MARKER_WORDS,
    ColumnKind,
    ColumnSpec,
    DeviceGeometry,
    DeviceModel,
    Effect,
    SlcrRegister,
    format_geometry,
    format_trace,
    parse_geometry,
    parse_trace,
    start_clock,
    stop_clock,
)
from epochfpga.tenants import read_state

IDCODE = 0x03727093
FAR0 = 0x0042011E


def frame_with(word, value):
    words = [0] * 101
    words[word] = value
    return Frame(tuple(words))


def readback(dev, far, n=1, **kwargs):
    header, footer = readback_template(far, n, **kwargs)
    dev.pcap_write([r.word for r in header])
    data = dev.pcap_read((n + 1) * 101)
    dev.pcap_write([r.word for r in footer])
    return data


def state_copy(dev):
    return copy.deepcopy(dev.config_mem)


# -- geometry ------------------------------------------------------------------


def test_demo_geometry_roundtrips_through_text():
    geo = demo_geometry()
    assert geo.idcode == IDCODE
    assert parse_geometry(format_geometry(geo)) == geo


def test_geometry_rejects_bad_files():
    with pytest.raises(ConfigFileError):
        parse_geometry("[device]\nidcode = nope\n[columns]\n0 = CLB 36\n")
    with pytest.raises(ConfigFileError):
        parse_geometry("[device]\n[columns]\n0 = WIDGET 36\n")


def test_minors_per_block():
    geo = demo_geometry()
    assert geo.minors_at(BlockType.CLB, 0) == 36
    assert geo.minors_at(BlockType.BRAM, 6) == geo.bram_content_minors
    assert geo.minors_at(BlockType.BRAM, 0) == 0


def test_successor_walks_minor_then_column_then_row():
    geo = DeviceGeometry(rows_top=1, rows_bottom=1,
                         columns=(ColumnSpec(ColumnKind.CLB, 2), ColumnSpec(ColumnKind.BRAM, 1)),
                         bram_content_minors=2)
    walked = list(geo.frame_addresses())
    # independent enumeration: CLB frames of every column, then BRAM frames of BRAM columns
    expected = []
    for block, cols in ((BlockType.CLB, [(0, 2), (1, 1)]), (BlockType.BRAM, [(1, 2)])):
        for bottom in (False, True):
            for col, minors in cols:
                for m in range(minors):
                    expected.append(FrameAddress(block, bottom, 0, col, m))
    assert walked == expected
    assert geo.successor(expected[-1]) is None
    assert all(geo.successor(a) == b for a, b in zip(expected, expected[1:]))


def test_every_frame_address_is_in_sort_order():
    addrs = list(demo_geometry().frame_addresses())
    keys = [a.sort_key for a in addrs]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)


# -- cell map validation -------------------------------------------------------------


def entry(kind, far, word, bit, name, slot="s"):
    return LogicLocationEntry(kind, far_decode(far), word, bit, name, slot)


def test_cell_outside_geometry_rejected():
    with pytest.raises(CellOutsideGeometry):
        DeviceModel(demo_geometry(), [entry(ElementKind.FF, far_encode(FrameAddress(0, True, 1, 40, 30)), 0, 0, "x")])


@pytest.mark.parametrize(
    "cells",
    [
        [entry(ElementKind.FF, FAR0, 50, 0, "crc")],
        [entry(ElementKind.BRAM, FAR0, 3, 0, "bram_in_clb")],
        [entry(ElementKind.BRAM, 0x00C20300, 4, 0, "on_marker")],
        [entry(ElementKind.FF, FAR0, 1, 1, "a"), entry(ElementKind.FF, FAR0, 1, 1, "b")],
        [entry(ElementKind.DSP, FAR0, 1, 0, "dsp_in_clb")],
    ],
)
def test_invalid_bindings_rejected(cells):
    with pytest.raises(InvalidCellBinding):
        DeviceModel(demo_geometry(), cells)


# -- trace format --------------------------------------------------------------------


def test_trace_text_roundtrip():
    dev = bench_device(["slot0"])
    dev.pcap_write(build_write_sequence(FAR0, [Frame.zero()], FAR0, IDCODE))
    text = format_trace(dev.trace)
    assert parse_trace(text) == dev.trace
    assert Effect.from_line("FRAME_WRITE 0x0042011E") == Effect("FRAME_WRITE", ("0x0042011E",))


# -- port: writes ----------------------------------------------------------------------


def test_single_frame_write_lands_in_config_memory():
    dev = DeviceModel(demo_geometry(), demo_cell_map())
    frame = frame_with(12, 0x00002020)
    effects = dev.pcap_write(build_write_sequence(FAR0, [frame], FAR0, IDCODE))
    assert dev.read_frame(FAR0) == frame
    ops = [str(e) for e in effects]
    assert "IDCODE 0x03727093 OK" in ops and "FRAME_WRITE 0x0042011E" in ops
    assert ops.index("CMD WCFG") < ops.index("FRAME_WRITE 0x0042011E") < ops.index("CMD DESYNC")
    assert not dev.config.synced


def test_multi_frame_write_auto_increments():
    dev = DeviceModel(demo_geometry())
    frames = [frame_with(1, i + 1) for i in range(3)]
    dev.pcap_write(build_write_sequence(FAR0, frames, FAR0, IDCODE))
    fa = far_decode(FAR0)
    for f in frames:
        assert dev.read_frame(fa) == f
        fa = dev.geometry.successor(fa)


def test_idcode_mismatch_leaves_device_unchanged():
    dev = DeviceModel(demo_geometry())
    before = state_copy(dev)
    with pytest.raises(IdcodeMismatch):
        dev.pcap_write(build_write_sequence(FAR0, [frame_with(0, 1)], FAR0, 0x0BADC0DE))
    assert dev.config_mem == before
    assert str(dev.trace[-2]) == "ERROR IdcodeMismatch"


def _write_stream(far, payload, idcode=IDCODE, wcfg=True, check_id=True):
    words = [0xFFFFFFFF, 0xAA995566, 0x20000000]
    if check_id:
        words += [0x30018001, idcode]
    words += [0x30002001, far]
    if wcfg:
        words += [0x30008001, 0x1]
    words += [0x30004000, 0x50000000 | len(payload)] + list(payload)
    words += [0x30008001, 0x7, 0x30008001, 0xD]
    return words


def test_payload_without_padding_frame_is_rejected():
    dev = DeviceModel(demo_geometry())
    before = state_copy(dev)
    with pytest.raises(MissingPaddingFrame):
        dev.pcap_write(_write_stream(FAR0, frame_with(3, 7).words))
    with pytest.raises(MissingPaddingFrame):
        dev.pcap_write(_write_stream(FAR0, frame_with(3, 7).words + frame_with(9, 1).words))
    assert dev.config_mem == before


def test_write_requires_wcfg_and_idcode():
    dev = DeviceModel(demo_geometry())
    payload = frame_with(3, 7).words + Frame.zero().words
    with pytest.raises(WriteWhileNotWcfg):
        dev.pcap_write(_write_stream(FAR0, payload, wcfg=False))
    with pytest.raises(IdcodeMismatch):
        dev.pcap_write(_write_stream(FAR0, payload, check_id=False))


def test_write_to_address_outside_device():
    dev = DeviceModel(demo_geometry())
    payload = frame_with(3, 7).words + Frame.zero().words
    with pytest.raises(InvalidFrameAddress):
        dev.pcap_write(_write_stream(far_encode(FrameAddress(0, False, 5, 0, 0)), payload))


def test_crc_bypass_required_without_hook():
    dev = DeviceModel(demo_geometry())
    seq = build_write_sequence(FAR0, [frame_with(3, 7)], FAR0, IDCODE)
    # strip every RCRC command so the frame CRC is never bypassed
    stripped = []
    for w in seq:
        if w == 0x7 and stripped and stripped[-1] == 0x30008001:
            stripped.pop()
            continue
        stripped.append(w)
    with pytest.raises(CrcMismatch):
        dev.pcap_write(stripped)
    assert dev.read_frame(FAR0).is_zero


def test_crc_hook_accepts_matching_checksum():
    def hook(frame):
        return sum(w for i, w in enumerate(frame.words) if i != 50) & 0xFFFFFFFF

    dev = DeviceModel(demo_geometry(), crc_hook=hook)
    words = [0] * 101
    words[3] = 7
    words[50] = hook(Frame(tuple(words)))
    seq = [0xAA995566, 0x30018001, IDCODE, 0x30002001, FAR0, 0x30008001, 1,
           0x30004000, 0x500000CA] + words + [0] * 101 + [0x30008001, 0xD]
    dev.pcap_write(seq)
    assert dev.read_frame(FAR0)[3] == 7


def test_orphan_type2_rejected():
    dev = DeviceModel(demo_geometry())
    with pytest.raises(OrphanType2):
        dev.pcap_write([0xAA995566, 0x20000000, 0x500000CA])


def test_strict_mode_rejects_words_before_sync():
    dev = DeviceModel(demo_geometry())
    with pytest.raises(NotSynced):
        dev.pcap_write([0x12345678, 0xAA995566], strict=True)
    effects = dev.pcap_write([0x12345678, 0xAA995566])
    assert [str(e) for e in effects] == ["SYNC", "IGNORED 1"]


# -- port: readback -----------------------------------------------------------------


def test_readback_is_padding_frame_then_data():
    dev = DeviceModel(demo_geometry())
    dev.pcap_write(build_write_sequence(FAR0, [frame_with(12, 0xABCD)], FAR0, IDCODE))
    data = readback(dev, FAR0)
    assert len(data) == 202
    assert not any(data[:101])
    assert data[101 + 12] == 0xABCD


@pytest.mark.parametrize("k", [1, 2, 5])
def test_k_frame_readback_length(k):
    dev = DeviceModel(demo_geometry())
    data = readback(dev, FAR0, k)
    assert len(data) == (k + 1) * 101 and not any(data[:101])


def test_readback_needs_rcfg_and_whole_frames():
    dev = DeviceModel(demo_geometry())
    with pytest.raises(ReadbackNotArmed):
        dev.pcap_write([0xAA995566, 0x30002001, FAR0, 0x280060CA, 0x480000CA, 0x20000000])
    with pytest.raises(CountMismatch):
        dev.pcap_write([0xAA995566, 0x30008001, 4, 0x30002001, FAR0, 0x280060CA, 0x48000065])
    with pytest.raises(ReadbackNotArmed):
        dev.pcap_read(202)


def test_readback_read_count_must_match():
    dev = DeviceModel(demo_geometry())
    dev.pcap_write(build_readback_sequence(FAR0)[:-12])
    with pytest.raises(CountMismatch):
        dev.pcap_read(101)


def test_back_to_back_readback_faster_than_limit_freezes():
    from dataclasses import replace

    dev = DeviceModel(replace(demo_geometry(), readback_min_gap_us=50.0))
    readback(dev, FAR0)
    dev.idle(60.0)
    readback(dev, FAR0)
    assert not dev.frozen
    readback(dev, FAR0)
    assert dev.frozen and any(e.op == "FABRIC_FREEZE" for e in dev.trace)


# -- planes ----------------------------------------------------------------------------


def test_flip_flop_readback_is_stale_without_capture():
    dev = bench_device(["slot0"])
    dev.step_clock(5)
    stale = readback(dev, FAR0, capture_ffs=False)
    fresh = readback(dev, FAR0, capture_ffs=True)
    assert stale[101 + 12] == 0  # configuration still holds the initial 0x0
    bits = [fresh[101 + 12] >> 5 & 1, fresh[101 + 12] >> 13 & 1, fresh[101 + 13] >> 5 & 1, fresh[101 + 13] >> 13 & 1]
    assert sum(b << i for i, b in enumerate(bits)) == 5


def test_lut_frames_masked_without_glutmask():
    cells = [entry(ElementKind.LUTRAM, 0x0042011A, 7, 3, "lutram[0]")]
    dev = DeviceModel(demo_geometry(), cells)
    dev.write_cell(("s", "lutram[0]"), 1)
    lut_far = 0x0042011A  # minor 26
    masked = readback(dev, lut_far, glut_unmask=False)
    dev.config.ctl0 = 0
    unmasked = readback(dev, lut_far, glut_unmask=True)
    assert masked[101 + 7] == 0
    assert unmasked[101 + 7] == 1 << 3


def test_glutmask_requires_mask_register():
    dev = DeviceModel(demo_geometry())
    dev.pcap_write([0xAA995566, 0x3000A001, 0x100, 0x30008001, 0xD])
    assert not dev.config.glutmask_enabled
    dev.pcap_write([0xAA995566, 0x3000C001, 0x100, 0x3000A001, 0x100, 0x30008001, 0xD])
    assert dev.config.glutmask_enabled


def test_bram_is_write_through_and_readback_carries_markers():
    dev = bench_device(["slot4"])
    dev.step_clock(2)
    data = readback(dev, 0x00C20300)[101:]
    live = [dev.user_bram[("slot4", f"chain_mem[{i}]")] for i in range(4)]
    assert list(data[:4]) == live
    assert all(data[w] >> BRAM_READBACK_MARKER_BIT & 1 for w in BRAM_READBACK_MARKER_WORDS)


def test_writing_marked_bram_frame_reverts():
    dev = DeviceModel(demo_geometry())
    frame = frame_with(BRAM_READBACK_MARKER_WORDS[0], 1 << BRAM_READBACK_MARKER_BIT).replace_word(0, 9)
    effects = dev.pcap_write(build_write_sequence(0x00C20300, [frame], 0x00C20300, IDCODE))
    assert any(e.op == "BRAM_REVERT" for e in effects)
    assert dev.read_frame(0x00C20300).is_zero


def test_gsr_loads_configuration_into_user_plane_and_is_idempotent():
    dev = bench_device(["slot0", "slot4"])
    dev.step_clock(6)
    live = dict(dev.user_ff), dict(dev.user_bram), dict(dev.user_dsp)
    dev.gsr_pulse()
    assert read_state(dev, "slot0") == 0  # configuration still holds the load-time value
    once = dict(dev.user_ff), dict(dev.user_bram), dict(dev.user_dsp)
    dev.gsr_pulse()
    assert (dict(dev.user_ff), dict(dev.user_bram), dict(dev.user_dsp)) == once
    assert once[1] == live[1]  # BRAM is write-through, so GSR changes nothing there


def test_grestore_command_acts_like_gsr():
    dev = bench_device(["slot0"])
    dev.step_clock(3)
    dev.pcap_write([0xAA995566, 0x30008001, 0x0A, 0x30008001, 0xD])
    assert read_state(dev, "slot0") == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15))
def test_restore_needs_gsr(saved, interfered):
    dev = bench_device(["slot0"], update=True)
    dev.step_clock(saved)
    frame = Frame(tuple(readback(dev, FAR0)[101:]))
    dev.step_clock(interfered)
    live = read_state(dev, "slot0")
    dev.pcap_write(build_write_sequence(FAR0, [frame], FAR0, IDCODE))
    assert read_state(dev, "slot0") == live
    dev.gsr_pulse()
    assert read_state(dev, "slot0") == saved


# -- clock control ----------------------------------------------------------------------


def test_throttle_ignored_while_slcr_locked():
    dev = bench_device(["slot0"], running=False)
    dev.slcr_write(SlcrRegister.THROTTLE, 1)
    assert not dev.clock_running and str(dev.trace[-1]) == "THROTTLE_IGNORED locked"
    dev.slcr_write(SlcrRegister.UNLOCK, 0x1234)
    dev.slcr_write(SlcrRegister.THROTTLE, 1)
    assert not dev.clock_running
    start_clock(dev)
    assert dev.clock_running
    stop_clock(dev)
    assert not dev.clock_running


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 40), st.integers(0, 40))
def test_gated_clock_is_identity(before, gated):
    dev = bench_device()
    dev.step_clock(before)
    snapshot = {s: read_state(dev, s) for s in dev.slots}
    stop_clock(dev)
    dev.step_clock(gated)
    assert {s: read_state(dev, s) for s in dev.slots} == snapshot
    assert dev.trace[-1] == Effect("CLOCK_GATED", (str(gated),))


def test_shutdown_gates_the_design_clock():
    dev = bench_device(["slot0"])
    dev.pcap_write([0xAA995566, 0x30008001, 0x0B])
    dev.step_clock(3)
    assert read_state(dev, "slot0") == 0
    dev.pcap_write([0x30008001, 0x05, 0x30008001, 0x0D])
    dev.step_clock(3)
    assert read_state(dev, "slot0") == 3


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_clb_frame_write_reads_back_verbatim(data):
    dev = DeviceModel(demo_geometry())
    clb = [fa for fa in dev.geometry.frame_addresses()
           if fa.block_type == BlockType.CLB and dev.geometry.columns[fa.column].kind is ColumnKind.CLB]
    fa = data.draw(st.sampled_from(clb))
    frame = Frame(tuple(data.draw(st.lists(st.integers(0, 2**32 - 1), min_size=101, max_size=101))))
    dev.pcap_write(build_write_sequence(fa, [frame], fa, IDCODE))
    got = readback(dev, fa)[101:]
    assert [w for i, w in enumerate(got) if i != 50] == [w for i, w in enumerate(frame.words) if i != 50]


def test_only_gcapture_moves_flip_flops_into_configuration():
    dev = bench_device(["slot0"])
    dev.step_clock(6)
    dev.pcap_write([0xAA995566, 0x30008001, 0x07, 0x30008001, 0x0D])
    assert dev.read_frame(FAR0)[12] == 0
    effects = dev.pcap_write([0xAA995566, 0x30008001, 0x0C, 0x30008001, 0x0D])
    assert "GCAPTURE" in [e.op for e in effects]
    assert dev.read_frame(FAR0)[12] == 1 << 13  # count 6 = 0b0110: bit 1 lives at word 12 bit 13
