"""A simulated configuration fabric with a PCAP-style port.

The model keeps two planes apart:

* ``config_mem`` -- configuration memory, addressed by FAR, 101 words per
  frame.  This is what frame writes land in and what readback returns.
* the user plane (``user_ff``, ``user_bram``, ``user_dsp``) -- the live
  storage elements a running design sees.

GCAPTURE copies flip-flop/DSP state from the user plane into
configuration memory; a GSR pulse (or GRESTORE) loads it back.  BRAM
contents are written through to configuration memory as the design
runs, and LUT-RAM lives in configuration memory only.

Every observable action is appended to ``DeviceModel.trace`` as an
:class:`Effect`, which serialises to one stable line of text.
"""

from __future__ import annotations

import configparser
import enum
import functools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from epochfpga.bitcodec import (
    BUS_WIDTH_DETECT,
    BUS_WIDTH_SYNC,
    DUMMY_WORD,
    FRAME_CRC_WORD,
    FRAME_WORDS,
    LUT_MINORS_SLICE_L,
    LUT_MINORS_SLICE_M,
    SYNC_WORD,
    BlockType,
    Command,
    ElementKind,
    Frame,
    FrameAddress,
    LogicLocationEntry,
    Opcode,
    PacketKind,
    Register,
    as_far,
    decode_header,
    far_decode,
    far_encode,
    parse_logic_location,
)
from epochfpga.errors import (
    CellOutsideGeometry,
    CodecError,
    ConfigFileError,
    CountMismatch,
    CrcMismatch,
    EpochError,
    IdcodeMismatch,
    InvalidCellBinding,
    InvalidFrameAddress,
    MissingPaddingFrame,
    NotSynced,
    OrphanType2,
    ReadbackNotArmed,
    WriteWhileNotWcfg,
)

log = logging.getLogger(__name__)

ZYNQ_7020_IDCODE = 0x03727093
DEFAULT_SLCR_UNLOCK_KEY = 0x0000DF0D
GLUTMASK_BIT = 1 << 8

# Readback of a BRAM content frame comes back with bit 18 set in these words
# whether or not the memory changed.  Writing such a frame back is accepted on
# the port but the block reverts to its previous contents.
BRAM_READBACK_MARKER_WORDS = (4, 14, 24, 34, 44, 55, 65, 75, 85, 95)
BRAM_READBACK_MARKER_BIT = 18

THROTTLE_STOP = 0
THROTTLE_RUN = 1

_LUT_MINORS = frozenset(LUT_MINORS_SLICE_L + LUT_MINORS_SLICE_M)
_ZERO_FRAME = (0,) * FRAME_WORDS


# ---------------------------------------------------------------------------
# geometry


class ColumnKind(enum.Enum):
    CLB = "CLB"
    BRAM = "BRAM"
    DSP = "DSP"


@dataclass(frozen=True)
class ColumnSpec:
    kind: ColumnKind
    minors: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ColumnKind(self.kind))
        if self.minors < 1:
            raise ConfigFileError(f"column needs at least one minor, got {self.minors}")


@dataclass(frozen=True)
class DeviceGeometry:
    """Rows per half, major columns and a few device-level constants.

    ``bram_content_minors`` is the number of BRAM-block frames behind each
    BRAM column.  ``readback_min_gap_us`` is the shortest safe pause
    between two frame readbacks; going faster logs ``FABRIC_FREEZE``.
    """

    idcode: int = ZYNQ_7020_IDCODE
    rows_top: int = 1
    rows_bottom: int = 1
    columns: tuple = (ColumnSpec(ColumnKind.CLB, 36),)
    bram_content_minors: int = 128
    slcr_unlock_key: int = DEFAULT_SLCR_UNLOCK_KEY
    readback_min_gap_us: float = 0.0
    port_clock_hz: float = 50e6

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.columns:
            raise ConfigFileError("geometry needs at least one column")
        if self.rows_top < 0 or self.rows_bottom < 0 or self.rows_top + self.rows_bottom == 0:
            raise ConfigFileError("geometry needs at least one row")
        if self.rows_top > 32 or self.rows_bottom > 32 or len(self.columns) > 1024:
            raise ConfigFileError("geometry exceeds FAR field widths")

    def minors_at(self, block_type, column) -> int:
        if not 0 <= column < len(self.columns):
            return 0
        col = self.columns[column]
        if block_type == BlockType.CLB:
            return col.minors
        if block_type == BlockType.BRAM and col.kind is ColumnKind.BRAM:
            return self.bram_content_minors
        return 0

    @functools.cached_property
    def _row_sequence(self):
        seq = []
        for block in (BlockType.CLB, BlockType.BRAM):
            for bottom, nrows in ((False, self.rows_top), (True, self.rows_bottom)):
                seq.extend((block, bottom, row) for row in range(nrows))
        return tuple(seq)

    def contains(self, fa: FrameAddress) -> bool:
        nrows = self.rows_bottom if fa.bottom_half else self.rows_top
        return fa.row < nrows and fa.minor < self.minors_at(fa.block_type, fa.column)

    def _first_in_row(self, block, bottom, row, start_column=0):
        for col in range(start_column, len(self.columns)):
            if self.minors_at(block, col):
                return FrameAddress(block, bottom, row, col, 0)
        return None

    def successor(self, fa: FrameAddress) -> FrameAddress | None:
        """Next FAR in auto-increment order, or None past the last frame."""
        if not self.contains(fa):
            raise InvalidFrameAddress(f"{fa} is outside the device geometry")
        if fa.minor + 1 < self.minors_at(fa.block_type, fa.column):
            return fa.with_minor(fa.minor + 1)
        nxt = self._first_in_row(fa.block_type, fa.bottom_half, fa.row, fa.column + 1)
        if nxt is not None:
            return nxt
        rows = self._row_sequence
        for block, bottom, row in rows[rows.index((fa.block_type, fa.bottom_half, fa.row)) + 1 :]:
            nxt = self._first_in_row(block, bottom, row)
            if nxt is not None:
                return nxt
        return None

    def frame_addresses(self):
        for block, bottom, row in self._row_sequence:
            for col in range(len(self.columns)):
                for minor in range(self.minors_at(block, col)):
                    yield FrameAddress(block, bottom, row, col, minor)


def _int(text):
    return int(text, 0)


def parse_geometry(text: str) -> DeviceGeometry:
    """Parse the INI geometry schema::

        [device]
        idcode = 0x03727093
        rows_top = 1
        rows_bottom = 2
        bram_content_minors = 128     ; optional
        slcr_unlock_key = 0x0000DF0D  ; optional
        readback_min_gap_us = 0       ; optional
        port_clock_hz = 50000000      ; optional

        [columns]
        0 = CLB 36
        1 = BRAM 28
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
        dev = cp["device"]
        cols = cp["columns"]
        indexed = sorted((int(k), v.split()) for k, v in cols.items())
        if [i for i, _ in indexed] != list(range(len(indexed))):
            raise ConfigFileError("column indices must be 0..N-1 without gaps")
        columns = tuple(ColumnSpec(ColumnKind(kind.upper()), int(minors)) for _, (kind, minors) in indexed)
        return DeviceGeometry(
            idcode=_int(dev["idcode"]),
            rows_top=int(dev.get("rows_top", "1")),
            rows_bottom=int(dev.get("rows_bottom", "1")),
            columns=columns,
            bram_content_minors=int(dev.get("bram_content_minors", "128")),
            slcr_unlock_key=_int(dev.get("slcr_unlock_key", hex(DEFAULT_SLCR_UNLOCK_KEY))),
            readback_min_gap_us=float(dev.get("readback_min_gap_us", "0")),
            port_clock_hz=float(dev.get("port_clock_hz", "50e6")),
        )
    except ConfigFileError:
        raise
    except (configparser.Error, KeyError, ValueError) as exc:
        raise ConfigFileError(f"bad geometry file: {exc}") from exc


def format_geometry(geometry: DeviceGeometry) -> str:
    lines = [
        "[device]",
        f"idcode = 0x{geometry.idcode:08X}",
        f"rows_top = {geometry.rows_top}",
        f"rows_bottom = {geometry.rows_bottom}",
        f"bram_content_minors = {geometry.bram_content_minors}",
        f"slcr_unlock_key = 0x{geometry.slcr_unlock_key:08X}",
        f"readback_min_gap_us = {geometry.readback_min_gap_us}",
        f"port_clock_hz = {geometry.port_clock_hz:g}",
        "",
        "[columns]",
    ]
    lines += [f"{i} = {c.kind.value} {c.minors}" for i, c in enumerate(geometry.columns)]
    return "\n".join(lines) + "\n"


def load_geometry(path) -> DeviceGeometry:
    return parse_geometry(Path(path).read_text())


def load_cell_map(path) -> list[LogicLocationEntry]:
    return parse_logic_location(Path(path).read_text())


# ---------------------------------------------------------------------------
# effect trace


@dataclass(frozen=True)
class Effect:
    """One traced device action, e.g. ``Effect("FRAME_WRITE", ("0x0042011E",))``."""

    op: str
    args: tuple = ()

    def __str__(self):
        return " ".join((self.op, *self.args))

    @classmethod
    def from_line(cls, line: str) -> Effect:
        op, *args = line.split()
        return cls(op, tuple(args))


def format_trace(effects: Iterable[Effect]) -> str:
    return "".join(f"{e}\n" for e in effects)


def parse_trace(text: str) -> list[Effect]:
    return [Effect.from_line(line) for line in text.splitlines() if line.strip()]


def _hex(value):
    return f"0x{value:08X}"


# ---------------------------------------------------------------------------
# device state


@dataclass
class ConfigState:
    synced: bool = False
    cmd_reg: int = 0
    far_reg: int = 0
    ctl0: int = 0
    mask: int = 0
    crc_reg: int = 0
    idcode_checked: bool = False
    shutdown: bool = False
    crc_pending: bool = False
    readback_queue: list = field(default_factory=list)

    @property
    def glutmask_enabled(self):
        return bool(self.ctl0 & GLUTMASK_BIT)


@dataclass
class ClockControl:
    unlock_key: int = DEFAULT_SLCR_UNLOCK_KEY
    slcr_locked: bool = True
    throttle_enabled: bool = False


class SlcrRegister(enum.Enum):
    UNLOCK = "unlock"
    THROTTLE = "throttle"


CrcHook = Callable[[Frame], int]


class DeviceModel:
    """Single-owner mutable fabric model.  Not safe for concurrent use."""

    def __init__(self, geometry: DeviceGeometry, cell_map: Sequence[LogicLocationEntry] = (),
                 crc_hook: CrcHook | None = None):
        self.geometry = geometry
        self.cell_map = tuple(cell_map)
        self.crc_hook = crc_hook
        self.cells: dict[tuple, LogicLocationEntry] = {}
        self._lutram_mask: dict[int, dict[int, int]] = {}
        self._validate_cells()

        self.config = ConfigState()
        self.clock = ClockControl(unlock_key=geometry.slcr_unlock_key)
        self.config_mem: dict[int, list[int]] = {}
        self.user_ff = {c: 0 for c, e in self.cells.items() if e.element_kind is ElementKind.FF}
        self.user_bram = {c: 0 for c, e in self.cells.items() if e.element_kind is ElementKind.BRAM}
        self.user_dsp = {c: 0 for c, e in self.cells.items() if e.element_kind is ElementKind.DSP}
        self.designs: dict = {}
        self.update_lines: dict[str, bool] = {}
        self.trace: list[Effect] = []
        self.cycle = 0
        self.elapsed_us = 0.0
        self.gsr_pulsed = False
        self.frozen = False
        self._last_readback_end: float | None = None
        self._undo: dict[int, list[int] | None] | None = None
        self._crc_frames: list[tuple] = []
        self._reset_parser()

    # -- construction -------------------------------------------------------

    def _validate_cells(self):
        geo = self.geometry
        occupied: dict[tuple, int] = {}
        for e in self.cell_map:
            if not geo.contains(e.far):
                raise CellOutsideGeometry(f"{e.design_path} ({e.slot_id}) maps to {e.far}, outside the device")
            if e.cell_id in self.cells:
                raise InvalidCellBinding(f"duplicate cell {e.cell_id}")
            col = geo.columns[e.far.column]
            kind = e.element_kind
            if kind is ElementKind.BRAM:
                ok = e.far.block_type == BlockType.BRAM
            elif kind is ElementKind.DSP:
                ok = e.far.block_type == BlockType.CLB and col.kind is ColumnKind.DSP
            else:
                ok = e.far.block_type == BlockType.CLB and col.kind is ColumnKind.CLB
            if not ok:
                raise InvalidCellBinding(f"{kind.value} cell {e.design_path} cannot live at {e.far} ({col.kind.value})")
            if e.frame_word_offset == FRAME_CRC_WORD:
                raise InvalidCellBinding(f"{e.design_path} is bound to the frame CRC word")
            if kind is ElementKind.BRAM and e.frame_word_offset in BRAM_READBACK_MARKER_WORDS:
                raise InvalidCellBinding(f"{e.design_path} is bound to a BRAM marker word")
            bits = 0xFFFFFFFF if kind.is_word else 1 << e.bit_offset
            slot = (far_encode(e.far), e.frame_word_offset)
            if occupied.get(slot, 0) & bits:
                raise InvalidCellBinding(f"{e.design_path} overlaps another cell at {e.far} word {e.frame_word_offset}")
            occupied[slot] = occupied.get(slot, 0) | bits
            if kind is ElementKind.LUTRAM:
                per_frame = self._lutram_mask.setdefault(slot[0], {})
                per_frame[slot[1]] = per_frame.get(slot[1], 0) | bits
            self.cells[e.cell_id] = e

    @property
    def slots(self) -> list[str]:
        seen = {}
        for e in self.cell_map:
            seen.setdefault(e.slot_id, None)
        return list(seen)

    def slot_cells(self, slot_id) -> list[LogicLocationEntry]:
        return [e for e in self.cell_map if e.slot_id == slot_id]

    def slot_frames(self, slot_id) -> list[FrameAddress]:
        """FARs holding any of the slot's cells, in auto-increment order."""
        fars = {e.far for e in self.cell_map if e.slot_id == slot_id}
        return sorted(fars, key=lambda fa: fa.sort_key)

    def _emit(self, op, *args):
        self.trace.append(Effect(op, tuple(str(a) for a in args)))

    # -- configuration memory access ----------------------------------------

    def read_frame(self, far) -> Frame:
        words = self.config_mem.get(far_encode(as_far(far)))
        return Frame(tuple(words) if words else _ZERO_FRAME)

    def _frame_for_update(self, far_int) -> list[int]:
        words = self.config_mem.get(far_int)
        if self._undo is not None and far_int not in self._undo:
            self._undo[far_int] = None if words is None else list(words)
        if words is None:
            words = self.config_mem[far_int] = [0] * FRAME_WORDS
        return words

    def _store_frame(self, far_int, words):
        self._frame_for_update(far_int)[:] = words

    def cell_config_value(self, cell_id) -> int:
        e = self.cells[cell_id]
        words = self.config_mem.get(far_encode(e.far))
        word = words[e.frame_word_offset] if words else 0
        return word if e.element_kind.is_word else (word >> e.bit_offset) & 1

    def set_cell_config(self, cell_id, value):
        e = self.cells[cell_id]
        words = self._frame_for_update(far_encode(e.far))
        if e.element_kind.is_word:
            words[e.frame_word_offset] = value & 0xFFFFFFFF
        else:
            bit = 1 << e.bit_offset
            words[e.frame_word_offset] = (words[e.frame_word_offset] & ~bit) | (bit if value & 1 else 0)

    # -- user plane -----------------------------------------------------------

    def read_cell(self, cell_id) -> int:
        kind = self.cells[cell_id].element_kind
        if kind is ElementKind.FF:
            return self.user_ff[cell_id]
        if kind is ElementKind.BRAM:
            return self.user_bram[cell_id]
        if kind is ElementKind.DSP:
            return self.user_dsp[cell_id]
        return self.cell_config_value(cell_id)

    def write_cell(self, cell_id, value):
        """Write as the running design would: BRAM and LUT-RAM land in
        configuration memory too, flip-flops and DSP registers do not."""
        kind = self.cells[cell_id].element_kind
        if kind is ElementKind.FF:
            self.user_ff[cell_id] = value & 1
        elif kind is ElementKind.DSP:
            self.user_dsp[cell_id] = value & 0xFFFFFFFF
        elif kind is ElementKind.BRAM:
            self.user_bram[cell_id] = value & 0xFFFFFFFF
            self.set_cell_config(cell_id, value)
            self._emit("BRAM_WRITE", cell_id[0], cell_id[1], _hex(value & 0xFFFFFFFF))
        else:
            self.set_cell_config(cell_id, value)

    # -- configuration port ---------------------------------------------------

    def _reset_parser(self):
        self._payload_reg = None
        self._payload_left = 0
        self._payload: list[int] = []
        self._last_kind = None
        self._last_reg = None
        self._pending_read = None

    def pcap_write(self, words: Iterable[int], strict: bool = False) -> list[Effect]:
        """Feed words to the configuration port and return the effects.

        Words before a sync word are ignored (``strict`` turns stray
        non-preamble words into :class:`NotSynced`).  On any error the
        frame writes of this call are rolled back, the port desyncs and
        the error propagates.
        """
        start = len(self.trace)
        self._undo = {}
        ignored = 0
        try:
            for word in words:
                if not self.config.synced:
                    if word == SYNC_WORD:
                        self.config.synced = True
                        self._reset_parser()
                        self._emit("SYNC")
                    elif strict and word not in (DUMMY_WORD, BUS_WIDTH_SYNC, BUS_WIDTH_DETECT):
                        raise NotSynced(f"word 0x{word:08X} arrived before the sync word")
                    else:
                        ignored += 1
                    continue
                self._consume(word)
            if self.config.synced:
                self._arm_pending_read()
        except EpochError as exc:
            self._rollback()
            self.config.synced = False
            self.config.idcode_checked = False
            self._reset_parser()
            self._emit("ERROR", type(exc).__name__)
            raise
        finally:
            self._undo = None
            if ignored:
                self._emit("IGNORED", ignored)
        return self.trace[start:]

    def _rollback(self):
        for far_int, old in (self._undo or {}).items():
            if old is None:
                self.config_mem.pop(far_int, None)
            else:
                self.config_mem[far_int] = old

    def _consume(self, word):
        if self._payload_reg is not None:
            self._payload.append(word)
            self._payload_left -= 1
            if self._payload_left == 0:
                reg, payload = self._payload_reg, self._payload
                self._payload_reg, self._payload = None, []
                self._execute_write(reg, payload)
            return

        header = decode_header(word)
        if header.kind is PacketKind.TYPE2:
            if self._last_kind is not PacketKind.TYPE1:
                raise OrphanType2(f"Type-2 header 0x{word:08X} without a preceding Type-1 packet")
            reg = self._last_reg
        else:
            self._arm_pending_read()
            reg = header.register_id
        self._last_kind = header.kind
        if header.kind not in (PacketKind.TYPE1, PacketKind.TYPE2):
            return
        self._last_reg = reg

        if header.opcode is Opcode.WRITE:
            if header.word_count:
                self._payload_reg = reg
                self._payload_left = header.word_count
        elif header.opcode is Opcode.READ:
            if reg == Register.FDRO:
                # a Type-2 read overrides the count of the Type-1 before it
                self._pending_read = header.word_count
            else:
                self._emit("READ_REG", reg)

    def _execute_write(self, reg, payload):
        value = payload[-1]
        cfg = self.config
        if reg == Register.CMD:
            for v in payload:
                self._command(v)
        elif reg == Register.FAR:
            cfg.far_reg = value
            self._emit("FAR", _hex(value))
        elif reg == Register.FDRI:
            self._write_frames(payload)
        elif reg == Register.MASK:
            cfg.mask = value
            self._emit("MASK", _hex(value))
        elif reg == Register.CTL0:
            before = cfg.glutmask_enabled
            cfg.ctl0 = (cfg.ctl0 & ~cfg.mask) | (value & cfg.mask)
            self._emit("CTL0", _hex(cfg.ctl0))
            if cfg.glutmask_enabled != before:
                self._emit("GLUTMASK", "ON" if cfg.glutmask_enabled else "OFF")
        elif reg == Register.IDCODE:
            if value != self.geometry.idcode:
                raise IdcodeMismatch(
                    f"bitstream IDCODE 0x{value:08X} does not match device 0x{self.geometry.idcode:08X}"
                )
            cfg.idcode_checked = True
            self._emit("IDCODE", _hex(value), "OK")
        elif reg == Register.CRC:
            cfg.crc_reg = value
            self._emit("CRC", _hex(value))
        else:
            self._emit("WRITE_REG", reg, _hex(value))

    def _command(self, code):
        cfg = self.config
        cfg.cmd_reg = code
        try:
            name = Command(code).name
        except ValueError:
            name = _hex(code)
        self._emit("CMD", name)
        if code == Command.START:
            cfg.shutdown = False
        elif code == Command.SHUTDOWN:
            cfg.shutdown = True
        elif code == Command.RCRC:
            cfg.crc_reg = 0
            cfg.crc_pending = False
            self._crc_frames.clear()
        elif code == Command.GCAPTURE:
            self._capture()
        elif code == Command.GRESTORE:
            self.gsr_pulse()
        elif code == Command.DESYNC:
            if cfg.crc_pending:
                self._check_crc()
            cfg.synced = False
            cfg.idcode_checked = False
            self._reset_parser()

    def _check_crc(self):
        hook = self.crc_hook
        if hook is None:
            raise CrcMismatch("frame data was not followed by RCRC and no checksum hook is configured")
        for words in self._crc_frames:
            if hook(Frame(words)) != words[FRAME_CRC_WORD]:
                raise CrcMismatch("frame CRC word does not match the checksum hook")
        self.config.crc_pending = False
        self._crc_frames.clear()

    def _far_from_register(self) -> FrameAddress:
        try:
            fa = far_decode(self.config.far_reg)
        except CodecError as exc:
            raise InvalidFrameAddress(str(exc)) from exc
        if not self.geometry.contains(fa):
            raise InvalidFrameAddress(f"FAR {fa} is outside the device geometry")
        return fa

    def _write_frames(self, payload):
        cfg = self.config
        if cfg.cmd_reg != Command.WCFG:
            raise WriteWhileNotWcfg("frame data received while CMD is not WCFG")
        if not cfg.idcode_checked:
            raise IdcodeMismatch("frame data received before the IDCODE check")
        n = len(payload)
        if n % FRAME_WORDS or n < 2 * FRAME_WORDS or any(payload[-FRAME_WORDS:]):
            raise MissingPaddingFrame(
                f"FDRI payload of {n} words is not whole frames followed by an all-zero padding frame"
            )
        fa = self._far_from_register()
        for k in range(n // FRAME_WORDS - 1):
            if fa is None:
                raise InvalidFrameAddress("frame auto-increment ran past the last frame")
            words = tuple(payload[k * FRAME_WORDS : (k + 1) * FRAME_WORDS])
            far_int = far_encode(fa)
            if fa.block_type == BlockType.BRAM and any(
                words[w] >> BRAM_READBACK_MARKER_BIT & 1 for w in BRAM_READBACK_MARKER_WORDS
            ):
                self._emit("BRAM_REVERT", _hex(far_int))
            else:
                self._store_frame(far_int, words)
                self._emit("FRAME_WRITE", _hex(far_int))
            self._crc_frames.append(words)
            fa = self.geometry.successor(fa)
        if fa is not None:
            cfg.far_reg = far_encode(fa)
        cfg.crc_pending = True

    def _arm_pending_read(self):
        if self._pending_read is None:
            return
        count, self._pending_read = self._pending_read, None
        cfg = self.config
        if cfg.cmd_reg != Command.RCFG:
            raise ReadbackNotArmed("FDRO read requested while CMD is not RCFG")
        if count % FRAME_WORDS or count < 2 * FRAME_WORDS:
            raise CountMismatch(f"readback count {count} is not a padding frame plus whole frames")
        fa = self._far_from_register()
        if self._last_readback_end is not None:
            gap = self.elapsed_us - self._last_readback_end
            if gap < self.geometry.readback_min_gap_us:
                self.frozen = True
                self._emit("FABRIC_FREEZE", f"gap_us={gap:.3f}")
                log.warning("back-to-back readback %.3f us apart froze the fabric", gap)
        data = [0] * FRAME_WORDS
        first = fa
        for _ in range(count // FRAME_WORDS - 1):
            if fa is None:
                raise InvalidFrameAddress("readback auto-increment ran past the last frame")
            data.extend(self._readback_words(fa))
            fa = self.geometry.successor(fa)
        cfg.readback_queue = data
        self._emit("READBACK_ARM", first, count)

    def _readback_words(self, fa: FrameAddress) -> list[int]:
        far_int = far_encode(fa)
        words = list(self.config_mem.get(far_int, _ZERO_FRAME))
        if not self.config.glutmask_enabled:
            col = self.geometry.columns[fa.column]
            if fa.block_type == BlockType.CLB and col.kind is ColumnKind.CLB and fa.minor in _LUT_MINORS:
                words = [0] * FRAME_WORDS
            for w, bits in self._lutram_mask.get(far_int, {}).items():
                words[w] &= ~bits
        if fa.block_type == BlockType.BRAM:
            for w in BRAM_READBACK_MARKER_WORDS:
                words[w] |= 1 << BRAM_READBACK_MARKER_BIT
        return words

    def pcap_read(self, n: int) -> tuple:
        """Drain an armed readback: one zero padding frame, then the data."""
        queue = self.config.readback_queue
        if not queue:
            raise ReadbackNotArmed("no readback is armed")
        if n != len(queue):
            raise CountMismatch(f"readback armed for {len(queue)} words, {n} requested")
        out = tuple(queue)
        self.config.readback_queue = []
        self.elapsed_us += n / self.geometry.port_clock_hz * 1e6
        self._last_readback_end = self.elapsed_us
        self._emit("READBACK", n)
        return out

    # -- capture / GSR ----------------------------------------------------------

    def _capture(self):
        for cell, bit in self.user_ff.items():
            self.set_cell_config(cell, bit)
        for cell, word in self.user_dsp.items():
            self.set_cell_config(cell, word)
        self._emit("GCAPTURE", len(self.user_ff) + len(self.user_dsp))

    def gsr_pulse(self):
        """Load every flip-flop, DSP and BRAM cell from configuration memory."""
        for plane in (self.user_ff, self.user_bram, self.user_dsp):
            for cell in plane:
                plane[cell] = self.cell_config_value(cell)
        self.gsr_pulsed = True
        self._emit("GSR", len(self.user_ff) + len(self.user_bram) + len(self.user_dsp))

    # -- clocking -------------------------------------------------------------

    def slcr_write(self, reg: SlcrRegister, value: int):
        clk = self.clock
        if reg is SlcrRegister.UNLOCK:
            if value == clk.unlock_key:
                clk.slcr_locked = False
                self._emit("SLCR_UNLOCK")
            else:
                self._emit("SLCR_UNLOCK_REJECTED", _hex(value))
        elif reg is SlcrRegister.THROTTLE:
            if clk.slcr_locked:
                self._emit("THROTTLE_IGNORED", "locked")
            else:
                clk.throttle_enabled = bool(value)
                self._emit("THROTTLE", "RUN" if value else "STOP")
        else:
            raise ValueError(f"unknown SLCR register {reg!r}")

    @property
    def clock_running(self):
        return self.clock.throttle_enabled and not self.config.shutdown

    def step_clock(self, cycles: int):
        if cycles < 0:
            raise ValueError("cycles must be non-negative")
        if not self.clock_running:
            self._emit("CLOCK_GATED", cycles)
            return
        for design in list(self.designs.values()):
            design.advance(self, cycles)
        self.cycle += cycles
        self._emit("TICK", cycles)

    def idle(self, microseconds: float):
        self.elapsed_us += microseconds


def device_new(geometry: DeviceGeometry, cell_map: Sequence[LogicLocationEntry] = (), **kwargs) -> DeviceModel:
    return DeviceModel(geometry, cell_map, **kwargs)


pcap_write = DeviceModel.pcap_write
pcap_read = DeviceModel.pcap_read
slcr_write = DeviceModel.slcr_write
gsr_pulse = DeviceModel.gsr_pulse
step_clock = DeviceModel.step_clock


def start_clock(dev: DeviceModel):
    dev.slcr_write(SlcrRegister.UNLOCK, dev.clock.unlock_key)
    dev.slcr_write(SlcrRegister.THROTTLE, THROTTLE_RUN)


def stop_clock(dev: DeviceModel):
    dev.slcr_write(SlcrRegister.UNLOCK, dev.clock.unlock_key)
    dev.slcr_write(SlcrRegister.THROTTLE, THROTTLE_STOP)
