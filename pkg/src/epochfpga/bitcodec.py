"""Bit-exact codecs for 7-series style configuration data.

Covers frame addresses (FAR words), 101-word frames, Type-1/Type-2
configuration packets, ``.bit``/``.bin`` containers and the canonical
logic-location text format used to bind design storage elements to
frame bits.

All value types here are immutable; all functions are pure.
"""

from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from epochfpga.errors import (
    FieldOutOfRange,
    FrameLengthError,
    InvalidPacketHeader,
    LengthNotWordMultiple,
    MalformedLine,
    OrphanType2,
    PayloadCountMismatch,
    ReservedBitsSet,
    SyncNotFound,
    TruncatedPayload,
    UnknownBlockType,
)

WORD_MASK = 0xFFFFFFFF

FRAME_WORDS = 101
FRAME_CRC_WORD = 50

DUMMY_WORD = 0xFFFFFFFF
BUS_WIDTH_SYNC = 0x000000BB
BUS_WIDTH_DETECT = 0x11220044
SYNC_WORD = 0xAA995566
NOOP_WORD = 0x20000000

# FAR field layout: (shift, width)
_BLOCK = (23, 3)
_HALF = (22, 1)
_ROW = (17, 5)
_COLUMN = (7, 10)
_MINOR = (0, 7)
_FAR_RESERVED_MASK = 0xFC000000

# packet header layout
_TYPE_SHIFT = 29
_OP_SHIFT = 27
_T1_REG_SHIFT = 13
_T1_REG_MASK = 0x3FFF
_T1_COUNT_MASK = 0x7FF
_T1_RESERVED_MASK = 0x1800
_T2_COUNT_MASK = 0x7FFFFFF

LUT_MINORS_SLICE_L = (26, 27, 28, 29)
LUT_MINORS_SLICE_M = (32, 33, 34, 35)
FF_MINORS = (30, 31)


class BlockType(enum.IntEnum):
    CLB = 0b000
    BRAM = 0b001
    CFG_CLB = 0b010


class SliceParity(enum.Enum):
    ODD_SLICE_L = "odd-slice-l"
    EVEN_SLICE_M = "even-slice-m"


def _check_field(name, value, width):
    if not 0 <= value < (1 << width):
        raise FieldOutOfRange(f"{name}={value} does not fit in {width} bits")


@dataclass(frozen=True, order=False)
class FrameAddress:
    """Decoded frame address register contents."""

    block_type: BlockType = BlockType.CLB
    bottom_half: bool = False
    row: int = 0
    column: int = 0
    minor: int = 0

    def __post_init__(self):
        if self.block_type not in BlockType._value2member_map_:
            raise FieldOutOfRange(f"block_type={self.block_type!r} is not a known block type")
        object.__setattr__(self, "block_type", BlockType(self.block_type))
        object.__setattr__(self, "bottom_half", bool(self.bottom_half))
        _check_field("row", self.row, _ROW[1])
        _check_field("column", self.column, _COLUMN[1])
        _check_field("minor", self.minor, _MINOR[1])

    def encode(self) -> int:
        return far_encode(self)

    @property
    def sort_key(self):
        """Canonical ordering: minor fastest, then column, row, half, block."""
        return (int(self.block_type), self.bottom_half, self.row, self.column, self.minor)

    def with_minor(self, minor):
        return FrameAddress(self.block_type, self.bottom_half, self.row, self.column, minor)

    def __str__(self):
        return f"0x{far_encode(self):08X}"


def far_encode(fa: FrameAddress) -> int:
    return (
        (int(fa.block_type) << _BLOCK[0])
        | (int(fa.bottom_half) << _HALF[0])
        | (fa.row << _ROW[0])
        | (fa.column << _COLUMN[0])
        | fa.minor
    )


def far_decode(word: int) -> FrameAddress:
    if not 0 <= word <= WORD_MASK:
        raise FieldOutOfRange(f"FAR word {word!r} is not a 32-bit value")
    if word & _FAR_RESERVED_MASK:
        raise ReservedBitsSet(f"FAR 0x{word:08X} has reserved bits [31:26] set")
    block = (word >> _BLOCK[0]) & 0b111
    if block > BlockType.CFG_CLB:
        raise UnknownBlockType(f"FAR 0x{word:08X} has unknown block type {block:#05b}")
    return FrameAddress(
        BlockType(block),
        bool((word >> _HALF[0]) & 1),
        (word >> _ROW[0]) & 0x1F,
        (word >> _COLUMN[0]) & 0x3FF,
        word & 0x7F,
    )


def as_far(value) -> FrameAddress:
    """Accept either a FrameAddress or a raw FAR word."""
    if isinstance(value, FrameAddress):
        return value
    return far_decode(int(value))


def lut_far_minors(slice_parity: SliceParity) -> list[int]:
    """Minor addresses holding LUT init bits for a slice of the given parity."""
    if slice_parity is SliceParity.ODD_SLICE_L:
        return list(LUT_MINORS_SLICE_L)
    if slice_parity is SliceParity.EVEN_SLICE_M:
        return list(LUT_MINORS_SLICE_M)
    raise ValueError(f"unknown slice parity {slice_parity!r}")


def ff_far_minors() -> list[int]:
    return list(FF_MINORS)


@dataclass(frozen=True, slots=True)
class Frame:
    """One configuration frame: exactly 101 32-bit words."""

    words: tuple

    def __post_init__(self):
        words = tuple(self.words)
        if len(words) != FRAME_WORDS:
            raise FrameLengthError(f"frame must have {FRAME_WORDS} words, got {len(words)}")
        for w in words:
            if not 0 <= w <= WORD_MASK:
                raise FieldOutOfRange(f"frame word {w!r} is not a 32-bit value")
        object.__setattr__(self, "words", words)

    @classmethod
    def zero(cls) -> Frame:
        return cls((0,) * FRAME_WORDS)

    @property
    def crc_word(self) -> int:
        return self.words[FRAME_CRC_WORD]

    def is_zero(self) -> bool:
        return not any(self.words)

    def replace_word(self, index, value) -> Frame:
        words = list(self.words)
        words[index] = value
        return Frame(tuple(words))

    def __getitem__(self, index):
        return self.words[index]

    def __len__(self):
        return FRAME_WORDS

    def __iter__(self):
        return iter(self.words)


# ---------------------------------------------------------------------------
# configuration packets


class PacketKind(enum.Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"
    NOOP = "noop"
    DUMMY = "dummy"
    SYNC_WORD = "sync"
    BUS_WIDTH_SYNC = "bus-width-sync"
    BUS_WIDTH_DETECT = "bus-width-detect"


class Opcode(enum.IntEnum):
    NOP = 0
    READ = 1
    WRITE = 2


class Register(enum.IntEnum):
    CRC = 0
    FAR = 1
    FDRI = 2
    FDRO = 3
    CMD = 4
    CTL0 = 5
    MASK = 6
    IDCODE = 12


@dataclass(frozen=True)
class UnknownRegister:
    """A register id the codec has no name for; kept so streams round-trip."""

    id: int

    def __int__(self):
        return self.id

    def __str__(self):
        return f"Unknown({self.id})"


def register_for(reg_id: int):
    try:
        return Register(reg_id)
    except ValueError:
        return UnknownRegister(reg_id)


class Command(enum.IntEnum):
    """Payload values written to the CMD register."""

    NULL = 0x00
    WCFG = 0x01
    RCFG = 0x04
    START = 0x05
    RCRC = 0x07
    GRESTORE = 0x0A
    SHUTDOWN = 0x0B
    GCAPTURE = 0x0C
    DESYNC = 0x0D


_SPECIAL_WORDS = {
    DUMMY_WORD: PacketKind.DUMMY,
    BUS_WIDTH_SYNC: PacketKind.BUS_WIDTH_SYNC,
    BUS_WIDTH_DETECT: PacketKind.BUS_WIDTH_DETECT,
    SYNC_WORD: PacketKind.SYNC_WORD,
    NOOP_WORD: PacketKind.NOOP,
}
_SPECIAL_ENCODINGS = {kind: word for word, kind in _SPECIAL_WORDS.items()}


@dataclass(frozen=True)
class ConfigPacket:
    kind: PacketKind
    opcode: Opcode = Opcode.NOP
    register: Register | UnknownRegister | None = None
    word_count: int = 0
    payload: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "payload", tuple(self.payload))
        if (
            self.kind is PacketKind.TYPE1
            and self.opcode is Opcode.NOP
            and self.register == Register.CRC
            and self.word_count == 0
        ):
            # same header word as the bare NOOP
            object.__setattr__(self, "kind", PacketKind.NOOP)
            object.__setattr__(self, "register", None)

    @classmethod
    def noop(cls):
        return cls(PacketKind.NOOP)

    @classmethod
    def dummy(cls):
        return cls(PacketKind.DUMMY)

    @classmethod
    def sync(cls):
        return cls(PacketKind.SYNC_WORD)

    @classmethod
    def write(cls, register, payload):
        payload = tuple(payload)
        return cls(PacketKind.TYPE1, Opcode.WRITE, register, len(payload), payload)

    @classmethod
    def read(cls, register, count):
        return cls(PacketKind.TYPE1, Opcode.READ, register, count)

    @property
    def is_header(self):
        return self.kind in (PacketKind.TYPE1, PacketKind.TYPE2)


@dataclass(frozen=True)
class PacketHeader:
    """Fields of a single Type-1/Type-2 header word (no payload)."""

    kind: PacketKind
    opcode: Opcode
    register_id: int | None
    word_count: int


def decode_header(word: int) -> PacketHeader:
    """Decode one header word.  Special words come back with their kind and
    zero count; anything else that is neither Type-1 nor Type-2 is rejected."""
    special = _SPECIAL_WORDS.get(word)
    if special is not None:
        return PacketHeader(special, Opcode.NOP, None, 0)
    ptype = word >> _TYPE_SHIFT
    op = (word >> _OP_SHIFT) & 0b11
    if ptype not in (1, 2):
        raise InvalidPacketHeader(f"0x{word:08X} is not a Type-1/Type-2 header")
    if op == 0b11:
        raise InvalidPacketHeader(f"0x{word:08X} uses reserved opcode 0b11")
    if ptype == 1:
        if word & _T1_RESERVED_MASK:
            raise InvalidPacketHeader(f"0x{word:08X} has reserved Type-1 bits set")
        return PacketHeader(
            PacketKind.TYPE1, Opcode(op), (word >> _T1_REG_SHIFT) & _T1_REG_MASK, word & _T1_COUNT_MASK
        )
    return PacketHeader(PacketKind.TYPE2, Opcode(op), None, word & _T2_COUNT_MASK)


def packet_decode(words: Iterable[int]) -> list[ConfigPacket]:
    """Split a word stream into packets.

    Write packets consume ``word_count`` payload words; read and NOP
    packets carry none (their count is what the device will emit or
    skip).  A Type-2 packet inherits the register of the Type-1 packet
    immediately before it.
    """
    words = list(words)
    packets: list[ConfigPacket] = []
    i = 0
    while i < len(words):
        word = words[i]
        header = decode_header(word)
        i += 1
        if header.kind is PacketKind.TYPE1:
            register = register_for(header.register_id)
        elif header.kind is PacketKind.TYPE2:
            prev = packets[-1] if packets else None
            if prev is None or prev.kind is not PacketKind.TYPE1:
                raise OrphanType2(f"Type-2 header 0x{word:08X} at word {i - 1} has no preceding Type-1 packet")
            register = prev.register
        else:
            packets.append(ConfigPacket(header.kind))
            continue
        payload = ()
        if header.opcode is Opcode.WRITE:
            end = i + header.word_count
            if end > len(words):
                raise TruncatedPayload(
                    f"packet 0x{word:08X} wants {header.word_count} words, only {len(words) - i} remain"
                )
            payload = tuple(words[i:end])
            i = end
        packets.append(ConfigPacket(header.kind, header.opcode, register, header.word_count, payload))
    return packets


def _encode_one(pkt: ConfigPacket, prev: ConfigPacket | None) -> list[int]:
    if pkt.kind in _SPECIAL_ENCODINGS:
        if pkt.payload or pkt.word_count:
            raise PayloadCountMismatch(f"{pkt.kind.value} packet cannot carry a payload")
        return [_SPECIAL_ENCODINGS[pkt.kind]]

    if pkt.opcode is Opcode.WRITE:
        if len(pkt.payload) != pkt.word_count:
            raise PayloadCountMismatch(
                f"write packet declares {pkt.word_count} words but carries {len(pkt.payload)}"
            )
    elif pkt.payload:
        raise PayloadCountMismatch(f"{pkt.opcode.name} packet cannot carry a payload")

    op = int(pkt.opcode)
    if pkt.kind is PacketKind.TYPE1:
        if pkt.register is None:
            raise PayloadCountMismatch("Type-1 packet needs a register")
        reg_id = int(pkt.register)
        _check_field("register id", reg_id, 14)
        _check_field("Type-1 word count", pkt.word_count, 11)
        header = (1 << _TYPE_SHIFT) | (op << _OP_SHIFT) | (reg_id << _T1_REG_SHIFT) | pkt.word_count
    else:
        if prev is None or prev.kind is not PacketKind.TYPE1 or prev.register != pkt.register:
            raise OrphanType2("Type-2 packet must follow a Type-1 packet for the same register")
        _check_field("Type-2 word count", pkt.word_count, 27)
        header = (2 << _TYPE_SHIFT) | (op << _OP_SHIFT) | pkt.word_count
    return [header, *pkt.payload]


def packet_encode(pkts: Sequence[ConfigPacket]) -> list[int]:
    out: list[int] = []
    prev = None
    for pkt in pkts:
        out.extend(_encode_one(pkt, prev))
        prev = pkt
    return out


# ---------------------------------------------------------------------------
# containers


class ContainerKind(enum.Enum):
    BIT_FILE = "bit"
    BIN_FILE = "bin"


_PREAMBLE = struct.pack(">I", BUS_WIDTH_SYNC)
_PREAMBLE_WITH_DETECT = struct.pack(">II", BUS_WIDTH_SYNC, BUS_WIDTH_DETECT)


def _bytes_to_words(data: bytes) -> list[int]:
    if len(data) % 4:
        raise LengthNotWordMultiple(f"{len(data)} bytes is not a whole number of 32-bit words")
    return list(struct.unpack(f">{len(data) // 4}I", data))


def parse_container(data: bytes, kind: ContainerKind = ContainerKind.BIN_FILE) -> list[int]:
    """Turn a ``.bin`` or ``.bit`` file body into big-endian words.

    ``.bit`` metadata is not interpreted: everything before the bus-width
    preamble is dropped.
    """
    data = bytes(data)
    if kind is ContainerKind.BIN_FILE:
        return _bytes_to_words(data)
    start = data.find(_PREAMBLE_WITH_DETECT)
    if start < 0:
        start = data.find(_PREAMBLE)
    if start < 0:
        raise SyncNotFound("no 0x000000BB bus-width preamble in .bit container")
    body = data[start:]
    # trailing partial word, if any, is not configuration data
    return _bytes_to_words(body[: len(body) - len(body) % 4])


def words_to_bytes(words: Iterable[int]) -> bytes:
    words = list(words)
    return struct.pack(f">{len(words)}I", *words)


# ---------------------------------------------------------------------------
# logic-location files


class ElementKind(enum.Enum):
    FF = "FF"
    LUTRAM = "LUTRAM"
    BRAM = "BRAM"
    DSP = "DSP"

    @property
    def is_word(self):
        """BRAM and DSP cells are bound to a whole frame word."""
        return self in (ElementKind.BRAM, ElementKind.DSP)


@dataclass(frozen=True)
class LogicLocationEntry:
    element_kind: ElementKind
    far: FrameAddress
    frame_word_offset: int
    bit_offset: int
    design_path: str
    slot_id: str
    block: str = ""
    seq: int = 0

    def __post_init__(self):
        if not 0 <= self.frame_word_offset < FRAME_WORDS:
            raise FieldOutOfRange(f"frame word offset {self.frame_word_offset} outside 0..100")
        if not 0 <= self.bit_offset <= 31:
            raise FieldOutOfRange(f"bit offset {self.bit_offset} outside 0..31")

    @property
    def cell_id(self):
        return (self.slot_id, self.design_path)

    def to_line(self) -> str:
        return (
            f"Bit {self.seq} 0x{far_encode(self.far):08X} {self.frame_word_offset} {self.bit_offset} "
            f"Block={self.block or '-'} Kind={self.element_kind.value} "
            f"Net={self.design_path} Slot={self.slot_id}"
        )


_LL_RE = re.compile(
    r"^Bit\s+(?P<seq>\d+)\s+(?P<far>0[xX][0-9A-Fa-f]{8})\s+(?P<word>\d+)\s+(?P<bit>\d+)"
    r"\s+Block=(?P<block>\S+)\s+Kind=(?P<kind>\S+)\s+Net=(?P<net>\S+)\s+Slot=(?P<slot>\S+)$"
)


def parse_logic_location(text: str) -> list[LogicLocationEntry]:
    entries = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LL_RE.match(line)
        if m is None:
            raise MalformedLine(line_no, raw)
        try:
            kind = ElementKind(m["kind"])
        except ValueError:
            raise MalformedLine(line_no, raw, f"unknown Kind {m['kind']!r}") from None
        try:
            entry = LogicLocationEntry(
                element_kind=kind,
                far=far_decode(int(m["far"], 16)),
                frame_word_offset=int(m["word"]),
                bit_offset=int(m["bit"]),
                design_path=m["net"],
                slot_id=m["slot"],
                block=m["block"],
                seq=int(m["seq"]),
            )
        except (FieldOutOfRange, ReservedBitsSet, UnknownBlockType) as exc:
            raise MalformedLine(line_no, raw, str(exc)) from None
        entries.append(entry)
    return entries


def format_logic_location(entries: Iterable[LogicLocationEntry]) -> str:
    return "".join(e.to_line() + "\n" for e in entries)
