"""Preemption controller: command templates, context save and restore.

Save pauses the slot clock through the SLCR throttle, reads every frame
holding the slot's state back over the configuration port (capturing
flip-flops first and unmasking LUT contents), fixes up BRAM frames,
stores the frames in a DRAM model and resumes the clock.

Restore wraps each stored frame in a write template so it becomes a
small partial bitstream, writes it, then pulses GSR so the storage
elements pick up the written values.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from epochfpga.bitcodec import (
    BUS_WIDTH_DETECT,
    BUS_WIDTH_SYNC,
    DUMMY_WORD,
    FRAME_CRC_WORD,
    FRAME_WORDS,
    NOOP_WORD,
    SYNC_WORD,
    BlockType,
    Command,
    Frame,
    FrameAddress,
    as_far,
    far_decode,
    far_encode,
)
from epochfpga.errors import (
    CountOverflow,
    EpochError,
    GeometryMismatch,
    NotABramFrame,
    RegionOverflow,
    RegionOverlap,
    SnapshotFormatError,
    UnknownRegion,
)
from epochfpga.fabricsim import SlcrRegister, THROTTLE_RUN, THROTTLE_STOP, DeviceModel

log = logging.getLogger(__name__)

CMD_WRITE = 0x30008001
FAR_WRITE = 0x30002001
FDRI_WRITE = 0x30004000
FDRO_READ = 0x280060CA
IDCODE_WRITE = 0x30018001
MASK_WRITE = 0x3000C001
CTL0_WRITE = 0x3000A001
GLUTMASK_VALUE = 0x00000100
TYPE2_READ = 0x48000000
TYPE2_WRITE = 0x50000000
TYPE2_COUNT_MAX = 0x7FFFFFF

BRAM_FIXUP_BIT = 18


@dataclass(frozen=True)
class TemplateRow:
    word: int
    name: str


def _rows(name, word, count=1):
    return [TemplateRow(word, name)] * count


def _preamble():
    return (
        _rows("Dummy Word", DUMMY_WORD, 8)
        + _rows("Bus Width Sync Word", BUS_WIDTH_SYNC)
        + _rows("Bus Width Detect Word", BUS_WIDTH_DETECT)
        + _rows("Dummy Word", DUMMY_WORD)
        + _rows("Synchronization Word", SYNC_WORD)
    )


def _command(code, name, label="Type-1 Command Word"):
    return [TemplateRow(CMD_WRITE, label), TemplateRow(code, name)]


def _noops(n):
    return _rows("NOOP", NOOP_WORD, n)


def _type2_count(n_frames, base):
    count = (n_frames + 1) * FRAME_WORDS
    if n_frames < 1:
        raise ValueError("at least one frame is required")
    if count > TYPE2_COUNT_MAX:
        raise CountOverflow(f"{n_frames} frames need {count} words, more than a Type-2 count can hold")
    return base | count


def readback_template(far, n_frames=1, glut_unmask=True, capture_ffs=True):
    """Rows of the readback sequence, split as (header, footer).

    The frame data (one zero padding frame followed by ``n_frames``
    frames) is read from the port between the two parts.
    """
    count_word = _type2_count(n_frames, TYPE2_READ)
    far_word = far_encode(as_far(far))
    header = (
        _preamble()
        + _noops(2)
        + _command(Command.SHUTDOWN, "Fabric shutdown")
        + _noops(2)
        + _command(Command.RCRC, "Reset CRC Register")
        + _noops(6)
    )
    if glut_unmask:
        header += [
            TemplateRow(MASK_WRITE, "Global LUT Mask"),
            TemplateRow(GLUTMASK_VALUE, "Data Word (GLUTMASK)"),
            TemplateRow(CTL0_WRITE, "Global LUT Mask"),
            TemplateRow(GLUTMASK_VALUE, "Data Word (GLUTMASK)"),
        ]
    if capture_ffs:
        header += _command(Command.GCAPTURE, "Data Word (GCAPTURE)") + _noops(1)
    header += (
        _command(Command.RCFG, "Data Word (RCFG)")
        + _noops(3)
        + [
            TemplateRow(FAR_WRITE, "Write FAR"),
            TemplateRow(far_word, "FAR Address"),
            TemplateRow(FDRO_READ, "Write FDRO Reg Command"),
            TemplateRow(count_word, "Number of Words"),
        ]
        + _noops(32)
    )
    footer = (
        _noops(1)
        + _command(Command.START, "Start Command", "Write CMD Reg Command")
        + _noops(1)
        + _command(Command.RCRC, "Reset CRC Register", "Write CMD Reg Command")
        + _noops(1)
        + _command(Command.DESYNC, "De-Synchronization Command")
    )
    return header, footer


def build_readback_sequence(far, n_frames=1, glut_unmask=True, capture_ffs=True) -> list[int]:
    header, footer = readback_template(far, n_frames, glut_unmask, capture_ffs)
    return [r.word for r in header + footer]


def write_template(far, frames: Sequence[Frame], next_far, idcode: int) -> list[TemplateRow]:
    frames = list(frames)
    if not frames:
        raise ValueError("at least one frame is required")
    count_word = _type2_count(len(frames), TYPE2_WRITE)
    data = [TemplateRow(w, "Frame Words") for f in frames for w in Frame(tuple(f)).words]
    return (
        _preamble()
        + _noops(2)
        + _command(Command.RCRC, "Reset CRC Register")
        + _noops(2)
        + [
            TemplateRow(IDCODE_WRITE, "Write IDCODE Reg Command"),
            TemplateRow(idcode, "FPGA IDCODE"),
        ]
        + _noops(1)
        + [
            TemplateRow(FAR_WRITE, "Write FAR Command"),
            TemplateRow(far_encode(as_far(far)), "FAR Address"),
        ]
        + _noops(1)
        + _command(Command.WCFG, "Write Configuration Data", "Write CMD Reg Command")
        + _noops(1)
        + [
            TemplateRow(FDRI_WRITE, "Write FDRI Reg Command"),
            TemplateRow(count_word, "Number of Words"),
        ]
        + data
        + _rows("Padding Words", 0, FRAME_WORDS)
        + _command(Command.RCRC, "Reset CRC Register", "Write CMD Reg Command")
        + _noops(2)
        + [
            TemplateRow(FAR_WRITE, "Write FAR Command Word"),
            TemplateRow(far_encode(as_far(next_far)), "Next FAR Address"),
        ]
        + _command(Command.RCRC, "Reset CRC Register")
        + _noops(2)
        + _command(Command.DESYNC, "De-Synchronization Command")
        + _rows("Dummy Word", DUMMY_WORD)
        + _noops(2)
    )


def build_write_sequence(far, frames: Sequence[Frame], next_far, idcode: int) -> list[int]:
    return [r.word for r in write_template(far, frames, next_far, idcode)]


def capture_sequence(idcode: int) -> list[int]:
    """Sync, IDCODE check, GCAPTURE, desync.  Refreshes every flip-flop's
    configuration bit from its live value."""
    rows = (
        _preamble()
        + _noops(2)
        + _command(Command.RCRC, "Reset CRC Register")
        + [TemplateRow(IDCODE_WRITE, ""), TemplateRow(idcode, "")]
        + _noops(1)
        + _command(Command.GCAPTURE, "")
        + _noops(1)
        + _command(Command.DESYNC, "")
    )
    return [r.word for r in rows]


def format_template(rows: Iterable[TemplateRow], comments: Sequence[tuple[int, str]] = ()) -> str:
    """One ``0xHEX8`` word per line with the row name as an inline comment.
    ``comments`` inserts ``# text`` lines before the given row index."""
    extra = {}
    for index, text in comments:
        extra.setdefault(index, []).append(text)
    lines = []
    rows = list(rows)
    for i, row in enumerate(rows):
        lines.extend(f"# {t}" for t in extra.get(i, ()))
        lines.append(f"0x{row.word:08X}  # {row.name}")
    lines.extend(f"# {t}" for t in extra.get(len(rows), ()))
    return "\n".join(lines) + "\n"


def parse_template(text: str) -> list[int]:
    words = []
    for line in text.splitlines():
        body = line.split("#", 1)[0].strip()
        if body:
            words.append(int(body, 16))
    return words


# ---------------------------------------------------------------------------
# BRAM fixup


def bram_fixup_words() -> frozenset:
    """Word indices of a BRAM frame whose bit 18 must be cleared after readback."""
    return frozenset(
        w for w in range(4, 96) if (w < 54 and w % 10 == 4) or (w > 54 and w % 10 == 5)
    )


_FIXUP_WORDS = bram_fixup_words()


def is_bram_far(far) -> bool:
    return as_far(far).block_type == BlockType.BRAM


def apply_bram_fixup(frame: Frame, far) -> Frame:
    if not is_bram_far(far):
        raise NotABramFrame(f"{as_far(far)} is not a BRAM content frame")
    clear = ~(1 << BRAM_FIXUP_BIT)
    return Frame(tuple(w & clear if i in _FIXUP_WORDS else w for i, w in enumerate(frame.words)))


# ---------------------------------------------------------------------------
# snapshots and the DRAM model

SNAPSHOT_MAGIC = b"EPOC"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct(">4sHHIH")  # magic, version, flags, idcode, slot-id length
_TRAILER = struct.Struct(">QI")  # capture cycle, frame count
_FRAME_RECORD = struct.Struct(f">I{FRAME_WORDS}I")
FLAG_FIXUP_APPLIED = 0x0001


@dataclass(frozen=True)
class Snapshot:
    slot_id: str
    idcode: int
    captured_at_cycle: int
    frames: tuple  # ((FrameAddress, Frame), ...)
    fixup_applied: bool = False

    def __post_init__(self):
        frames = tuple((as_far(fa), f if isinstance(f, Frame) else Frame(tuple(f))) for fa, f in self.frames)
        if not frames:
            raise SnapshotFormatError("a snapshot holds at least one frame")
        keys = [fa.sort_key for fa, _ in frames]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise SnapshotFormatError("snapshot frames must be in strictly increasing FAR order")
        object.__setattr__(self, "frames", frames)

    @property
    def fars(self):
        return [fa for fa, _ in self.frames]

    def has_bram(self):
        return any(is_bram_far(fa) for fa, _ in self.frames)

    def to_bytes(self) -> bytes:
        slot = self.slot_id.encode()
        flags = FLAG_FIXUP_APPLIED if self.fixup_applied else 0
        out = [
            _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, flags, self.idcode, len(slot)),
            slot,
            _TRAILER.pack(self.captured_at_cycle, len(self.frames)),
        ]
        out += [_FRAME_RECORD.pack(far_encode(fa), *frame.words) for fa, frame in self.frames]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> Snapshot:
        data = bytes(data)
        try:
            magic, version, flags, idcode, slot_len = _HEADER.unpack_from(data, 0)
            if magic != SNAPSHOT_MAGIC:
                raise SnapshotFormatError(f"bad magic {magic!r}")
            if version != SNAPSHOT_VERSION:
                raise SnapshotFormatError(f"unsupported snapshot version {version}")
            pos = _HEADER.size
            slot = data[pos : pos + slot_len].decode()
            pos += slot_len
            cycle, count = _TRAILER.unpack_from(data, pos)
            pos += _TRAILER.size
            frames = []
            for _ in range(count):
                far_word, *words = _FRAME_RECORD.unpack_from(data, pos)
                pos += _FRAME_RECORD.size
                frames.append((far_decode(far_word), Frame(tuple(words))))
        except (struct.error, UnicodeDecodeError) as exc:
            raise SnapshotFormatError(f"truncated or corrupt snapshot: {exc}") from exc
        return cls(slot, idcode, cycle, tuple(frames), bool(flags & FLAG_FIXUP_APPLIED))

    @staticmethod
    def encoded_size(slot_id: str, n_frames: int) -> int:
        return _HEADER.size + len(slot_id.encode()) + _TRAILER.size + n_frames * _FRAME_RECORD.size


@dataclass(frozen=True)
class DramRegion:
    base_address: int
    capacity_frames: int
    size: int

    @property
    def end(self):
        return self.base_address + self.size


# 0x0000000A / 0x000B0000 are the example addresses for the first two slots.
DEFAULT_REGION_BASES = (0x0000000A, 0x000B0000)
REGION_ALIGN = 0x10000


@dataclass
class DramStore:
    regions: dict = field(default_factory=dict)
    contents: bytearray = field(default_factory=bytearray)

    def allocate(self, slot_id: str, base_address: int, capacity_frames: int) -> DramRegion:
        region = DramRegion(base_address, capacity_frames, Snapshot.encoded_size(slot_id, capacity_frames))
        for other_slot, other in self.regions.items():
            if other_slot != slot_id and region.base_address < other.end and other.base_address < region.end:
                raise RegionOverlap(f"region for {slot_id} overlaps the region of {other_slot}")
        self.regions[slot_id] = region
        if len(self.contents) < region.end:
            self.contents.extend(bytes(region.end - len(self.contents)))
        return region

    @classmethod
    def for_device(cls, dev: DeviceModel, bases: Sequence[int] = DEFAULT_REGION_BASES) -> DramStore:
        """One region per slot sized to the slot's frame count."""
        store = cls()
        next_base = 0
        for i, slot in enumerate(dev.slots):
            base = bases[i] if i < len(bases) else next_base
            region = store.allocate(slot, base, len(dev.slot_frames(slot)))
            next_base = max(next_base, -(-region.end // REGION_ALIGN) * REGION_ALIGN)
        return store

    def region(self, slot_id) -> DramRegion:
        try:
            return self.regions[slot_id]
        except KeyError:
            raise UnknownRegion(f"no DRAM region allocated for slot {slot_id!r}") from None

    def write(self, snapshot: Snapshot):
        region = self.region(snapshot.slot_id)
        if len(snapshot.frames) > region.capacity_frames:
            raise RegionOverflow(
                f"{len(snapshot.frames)} frames do not fit the {region.capacity_frames}-frame region "
                f"of {snapshot.slot_id}"
            )
        blob = snapshot.to_bytes()
        self.contents[region.base_address : region.base_address + len(blob)] = blob

    def load(self, slot_id) -> Snapshot:
        region = self.region(slot_id)
        return Snapshot.from_bytes(self.contents[region.base_address : region.end])


# ---------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class TimingModel:
    """Per-frame latencies measured over a 50 MHz PCAP; not derived from word counts."""

    port_clock_hz: float = 50e6
    save_us_per_frame: float = 62.2
    restore_us_per_frame: float = 67.4
    interframe_gap_us: float = 0.0

    def __post_init__(self):
        if self.port_clock_hz <= 0 or self.save_us_per_frame <= 0 or self.restore_us_per_frame <= 0:
            raise ValueError("timing constants must be positive")
        if self.interframe_gap_us < 0:
            raise ValueError("inter-frame gap cannot be negative")

    def what_if(self, port_clock_hz: float) -> TimingModel:
        """Hypothetical model at another port clock with the extra gaps removed."""
        scale = self.port_clock_hz / port_clock_hz
        return TimingModel(port_clock_hz, self.save_us_per_frame * scale, self.restore_us_per_frame * scale, 0.0)


SAVE = "save"
RESTORE = "restore"


def estimate_timing(tm: TimingModel, n_frames: int, op: str) -> float:
    if n_frames < 0:
        raise ValueError("frame count cannot be negative")
    if n_frames == 0:
        return 0.0
    per_frame = {SAVE: tm.save_us_per_frame, RESTORE: tm.restore_us_per_frame}[op]
    return n_frames * per_frame + (n_frames - 1) * tm.interframe_gap_us


# ---------------------------------------------------------------------------
# save / restore


def _pause(dev):
    dev.slcr_write(SlcrRegister.UNLOCK, dev.clock.unlock_key)
    dev.slcr_write(SlcrRegister.THROTTLE, THROTTLE_STOP)


def _resume(dev):
    dev.slcr_write(SlcrRegister.UNLOCK, dev.clock.unlock_key)
    dev.slcr_write(SlcrRegister.THROTTLE, THROTTLE_RUN)


def context_save(dev: DeviceModel, slot: str, store: DramStore | None = None, *,
                 bram_fixup: bool = True, timing: TimingModel | None = None) -> Snapshot:
    """Pause, read back every frame of ``slot``, store it, resume."""
    timing = timing or TimingModel()
    fars = dev.slot_frames(slot)
    if not fars:
        raise UnknownRegion(f"slot {slot!r} has no cells in the device cell map")
    if store is not None:
        store.region(slot)
    frames = []
    _pause(dev)
    try:
        for i, fa in enumerate(fars):
            if i:
                dev.idle(timing.interframe_gap_us)
            header, footer = readback_template(fa, 1, glut_unmask=True, capture_ffs=True)
            try:
                dev.pcap_write([r.word for r in header])
                data = dev.pcap_read(2 * FRAME_WORDS)
                dev.pcap_write([r.word for r in footer])
            except EpochError as exc:
                exc.frame_address = fa
                log.error("readback of %s failed: %s", fa, exc)
                raise
            frame = Frame(data[FRAME_WORDS:])
            if bram_fixup and is_bram_far(fa):
                frame = apply_bram_fixup(frame, fa)
            frames.append((fa, frame))
        snapshot = Snapshot(
            slot,
            dev.geometry.idcode,
            dev.cycle,
            tuple(frames),
            fixup_applied=bram_fixup and any(is_bram_far(fa) for fa in fars),
        )
        if store is not None:
            store.write(snapshot)
    finally:
        _resume(dev)
    return snapshot


def _write_frames(dev, pairs, idcode):
    for i, (fa, frame) in enumerate(pairs):
        next_far = pairs[i + 1][0] if i + 1 < len(pairs) else fa
        try:
            dev.pcap_write(build_write_sequence(fa, [frame], next_far, idcode))
        except EpochError as exc:
            exc.frame_address = fa
            raise


def context_restore(dev: DeviceModel, snapshot: Snapshot | str, store: DramStore | None = None, *,
                    gsr: bool = True, blank_first: bool = False) -> None:
    """Write a snapshot back as run-time partial bitstreams and pulse GSR.

    ``snapshot`` may be a slot id, in which case it is loaded from ``store``.
    Before the frame writes, every live flip-flop is captured so that the
    global GSR pulse does not roll back other slots.
    """
    if isinstance(snapshot, str):
        if store is None:
            raise UnknownRegion("restoring by slot id needs a DRAM store")
        snapshot = store.load(snapshot)
    _pause(dev)
    try:
        dev.pcap_write(capture_sequence(snapshot.idcode))
        if blank_first:
            _write_frames(dev, [(fa, Frame.zero()) for fa in snapshot.fars], snapshot.idcode)
        _write_frames(dev, list(snapshot.frames), snapshot.idcode)
        if gsr:
            dev.gsr_pulse()
    finally:
        _resume(dev)


def blank_slot(dev: DeviceModel, slot: str, *, gsr: bool = True) -> None:
    """Write all-zero frames over the slot and (by default) pulse GSR."""
    fars = dev.slot_frames(slot)
    _pause(dev)
    try:
        dev.pcap_write(capture_sequence(dev.geometry.idcode))
        _write_frames(dev, [(fa, Frame.zero()) for fa in fars], dev.geometry.idcode)
        if gsr:
            dev.gsr_pulse()
    finally:
        _resume(dev)


# ---------------------------------------------------------------------------
# diff


@dataclass(frozen=True)
class BitDifference:
    far: FrameAddress
    word: int
    bits: tuple

    def __str__(self):
        return f"{self.far} word {self.word} bits {','.join(map(str, self.bits))}"


def diff_snapshots(a: Snapshot, b: Snapshot, include_crc_word: bool = False) -> list[BitDifference]:
    if a.slot_id != b.slot_id or a.idcode != b.idcode or a.fars != b.fars:
        raise GeometryMismatch(f"snapshots of {a.slot_id} and {b.slot_id} cover different frames")
    out = []
    for (fa, fx), (_, fy) in zip(a.frames, b.frames):
        for w, (x, y) in enumerate(zip(fx.words, fy.words)):
            if w == FRAME_CRC_WORD and not include_crc_word:
                continue
            delta = x ^ y
            if delta:
                out.append(BitDifference(fa, w, tuple(i for i in range(32) if delta >> i & 1)))
    return out
