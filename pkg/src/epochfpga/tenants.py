"""Reference tenant designs whose state lives in mapped fabric cells.

Each design is loaded into a slot of a :class:`~epochfpga.fabricsim.DeviceModel`
and advanced by ``step_clock``.  The in-fabric logic works bit by bit on
the cells it is bound to (ripple adders, shift registers), while
:func:`oracle_replay` is a plain integer model of the same designs used
to check save/restore results.

Cell binding convention, per slot: flip-flop cells named ``name[i]`` form
the state register with ``i`` as bit index; BramChain additionally owns
BRAM word cells ``name[i]`` (chain entries, in index order) and at most
one DSP cell holding a multiply-accumulate register.
"""

from __future__ import annotations

import configparser
import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple

from epochfpga.bitcodec import ElementKind, Frame, FrameAddress, far_encode
from epochfpga.errors import BindingMismatch, ConfigFileError, SlotOverlap, UnknownSlot

M32 = 0xFFFFFFFF

CHAIN_ROTATE = 5
CHAIN_INCREMENT = 0x9E3779B9
MAC_COEFF = 0x01000193


class DesignKind(enum.Enum):
    UP_COUNTER4 = "upcounter4"
    DOWN_COUNTER4 = "downcounter4"
    LFSR8 = "lfsr8"
    LFSR32 = "lfsr32"
    BRAM_CHAIN = "bramchain"


STATE_WIDTH = {
    DesignKind.UP_COUNTER4: 4,
    DesignKind.DOWN_COUNTER4: 4,
    DesignKind.LFSR8: 8,
    DesignKind.LFSR32: 32,
}

# Fibonacci taps, maximal length: x^8+x^6+x^5+x^4+1 and x^32+x^22+x^2+x+1
DEFAULT_TAPS = {
    DesignKind.LFSR8: (8, 6, 5, 4),
    DesignKind.LFSR32: (32, 22, 2, 1),
}


@dataclass(frozen=True)
class DesignParams:
    seed: int = 1
    taps: tuple = ()
    chain_len: int = 0  # 0: take it from the bound BRAM cells

    def taps_for(self, kind):
        return tuple(self.taps) or DEFAULT_TAPS.get(kind, ())


class ChainState(NamedTuple):
    ptr: int
    words: tuple
    acc: int | None = None


@dataclass(frozen=True)
class TenantDesign:
    kind: DesignKind
    slot_id: str
    params: DesignParams = field(default_factory=DesignParams)
    cells: tuple | None = None  # explicit cell ids; default: every cell tagged with slot_id


@dataclass
class UpdateLine:
    asserted: bool = False


# ---------------------------------------------------------------------------
# software oracle


def chain_next(word: int) -> int:
    """One link of the additive-rotate chain."""
    word &= M32
    return ((((word << CHAIN_ROTATE) | (word >> (32 - CHAIN_ROTATE))) & M32) + CHAIN_INCREMENT) & M32


def initial_state(kind: DesignKind, params: DesignParams = DesignParams(), chain_len=None, with_acc=True):
    if kind is DesignKind.UP_COUNTER4:
        return 0x0
    if kind is DesignKind.DOWN_COUNTER4:
        return 0xF
    if kind in (DesignKind.LFSR8, DesignKind.LFSR32):
        return params.seed & ((1 << STATE_WIDTH[kind]) - 1)
    length = chain_len or params.chain_len
    if length < 1:
        raise BindingMismatch("BramChain needs at least one chain word")
    return ChainState(0, (params.seed & M32,) + (0,) * (length - 1), 0 if with_acc else None)


def oracle_replay(kind: DesignKind, params: DesignParams, start_state, n_ticks: int, update: bool = True):
    """State after ``n_ticks`` clock edges, computed without the fabric."""
    if kind is DesignKind.UP_COUNTER4:
        return (start_state + n_ticks) % 16 if update else start_state
    if kind is DesignKind.DOWN_COUNTER4:
        return (start_state - n_ticks) % 16 if update else start_state
    if kind in (DesignKind.LFSR8, DesignKind.LFSR32):
        width = STATE_WIDTH[kind]
        mask = (1 << width) - 1
        tap_mask = sum(1 << (t - 1) for t in params.taps_for(kind))
        state = start_state
        for _ in range(n_ticks):
            state = ((state << 1) | (bin(state & tap_mask).count("1") & 1)) & mask
        return state
    ptr, words, acc = start_state
    words = list(words)
    for _ in range(n_ticks):
        nxt = (ptr + 1) % len(words)
        words[nxt] = chain_next(words[ptr % len(words)])
        if acc is not None:
            acc = (acc + words[nxt] * MAC_COEFF) & M32
        ptr = nxt
    return ChainState(ptr, tuple(words), acc)


# ---------------------------------------------------------------------------
# in-fabric logic


def _ripple_add(a_bits, b_bits):
    out, carry = [], 0
    for a, b in zip(a_bits, b_bits):
        out.append(a ^ b ^ carry)
        carry = (a & b) | (carry & (a ^ b))
    return out


def _ripple_increment(bits):
    out, carry = [], 1
    for b in bits:
        out.append(b ^ carry)
        carry &= b
    return out


def _ripple_decrement(bits):
    out, borrow = [], 1
    for b in bits:
        out.append(b ^ borrow)
        borrow &= b ^ 1
    return out


def _to_bits(value, width):
    return [(value >> i) & 1 for i in range(width)]


def _from_bits(bits):
    value = 0
    for i, b in enumerate(bits):
        value |= b << i
    return value


_INCREMENT_BITS = _to_bits(CHAIN_INCREMENT, 32)
_INDEX_RE = re.compile(r"\[(\d+)\]$")


def _cell_index(cell_id):
    m = _INDEX_RE.search(cell_id[1])
    return int(m.group(1)) if m else 0


class LoadedDesign:
    """A design bound to concrete cells of a device."""

    def __init__(self, design: TenantDesign, entries):
        self.design = design
        self.kind = design.kind
        self.params = design.params
        by_kind = {k: [] for k in ElementKind}
        for e in entries:
            by_kind[e.element_kind].append(e)
        for kind_list in by_kind.values():
            kind_list.sort(key=lambda e: _cell_index(e.cell_id))
        self.entries = tuple(entries)
        self.ff = [e.cell_id for e in by_kind[ElementKind.FF]]
        self.bram = [e.cell_id for e in by_kind[ElementKind.BRAM]]
        self.dsp = [e.cell_id for e in by_kind[ElementKind.DSP]]
        if by_kind[ElementKind.LUTRAM]:
            raise BindingMismatch(f"{design.kind.value} does not use LUT-RAM cells")

        if self.kind is DesignKind.BRAM_CHAIN:
            if not self.bram or not self.ff:
                raise BindingMismatch("BramChain needs pointer flip-flops and at least one BRAM word")
            if len(self.dsp) > 1:
                raise BindingMismatch("BramChain uses at most one DSP accumulator")
            length = self.params.chain_len or len(self.bram)
            if length != len(self.bram):
                raise BindingMismatch(f"chain_len {length} but {len(self.bram)} BRAM cells are bound")
            if (1 << len(self.ff)) < length:
                raise BindingMismatch(f"{len(self.ff)} pointer bits cannot index {length} chain words")
        else:
            width = STATE_WIDTH[self.kind]
            if len(self.ff) != width or self.bram or self.dsp:
                raise BindingMismatch(
                    f"{self.kind.value} needs exactly {width} flip-flops, got {len(self.ff)} FF / "
                    f"{len(self.bram)} BRAM / {len(self.dsp)} DSP cells"
                )

    @property
    def cell_ids(self):
        return [e.cell_id for e in self.entries]

    def initial_state(self):
        return initial_state(self.kind, self.params, len(self.bram), bool(self.dsp))

    # state <-> cell values

    def _state_from(self, get):
        ff_value = _from_bits([get(c) & 1 for c in self.ff])
        if self.kind is not DesignKind.BRAM_CHAIN:
            return ff_value
        words = tuple(get(c) for c in self.bram)
        acc = get(self.dsp[0]) if self.dsp else None
        return ChainState(ff_value, words, acc)

    def _cell_values(self, state):
        if self.kind is not DesignKind.BRAM_CHAIN:
            return dict(zip(self.ff, _to_bits(state, len(self.ff))))
        values = dict(zip(self.ff, _to_bits(state.ptr, len(self.ff))))
        values.update(zip(self.bram, state.words))
        if self.dsp:
            values[self.dsp[0]] = state.acc or 0
        return values

    def read_state(self, dev):
        return self._state_from(dev.read_cell)

    def state_from_frames(self, frames: Mapping):
        """Decode the design state from {FrameAddress or FAR word: Frame}."""
        by_int = {(far_encode(k) if isinstance(k, FrameAddress) else int(k)): v for k, v in frames.items()}
        lookup = {e.cell_id: e for e in self.entries}

        def get(cell):
            e = lookup[cell]
            frame = by_int.get(far_encode(e.far))
            word = frame[e.frame_word_offset] if frame is not None else 0
            return word if e.element_kind.is_word else (word >> e.bit_offset) & 1

        return self._state_from(get)

    def install(self, dev, state):
        """Write a state into both the user plane and configuration memory."""
        for cell, value in self._cell_values(state).items():
            kind = dev.cells[cell].element_kind
            plane = {ElementKind.FF: dev.user_ff, ElementKind.BRAM: dev.user_bram, ElementKind.DSP: dev.user_dsp}[kind]
            plane[cell] = value
            dev.set_cell_config(cell, value)

    # clocking

    def advance(self, dev, cycles):
        if cycles == 0:
            return
        if self.kind is DesignKind.BRAM_CHAIN:
            self._advance_chain(dev, cycles)
            return
        bits = [dev.user_ff[c] for c in self.ff]
        if self.kind in (DesignKind.UP_COUNTER4, DesignKind.DOWN_COUNTER4):
            if not dev.update_lines.get(self.design.slot_id, False):
                return
            step = _ripple_increment if self.kind is DesignKind.UP_COUNTER4 else _ripple_decrement
            for _ in range(cycles):
                bits = step(bits)
        else:
            taps = [t - 1 for t in self.params.taps_for(self.kind)]
            for _ in range(cycles):
                fb = 0
                for t in taps:
                    fb ^= bits[t]
                bits = [fb] + bits[:-1]
        for cell, b in zip(self.ff, bits):
            dev.user_ff[cell] = b

    def _advance_chain(self, dev, cycles):
        ptr_bits = [dev.user_ff[c] for c in self.ff]
        length = len(self.bram)
        acc = dev.user_dsp[self.dsp[0]] if self.dsp else None
        for _ in range(cycles):
            ptr = _from_bits(ptr_bits) % length
            word_bits = _to_bits(dev.user_bram[self.bram[ptr]], 32)
            rotated = word_bits[32 - CHAIN_ROTATE :] + word_bits[: 32 - CHAIN_ROTATE]
            new_word = _from_bits(_ripple_add(rotated, _INCREMENT_BITS))
            ptr_bits = _ripple_increment(ptr_bits)
            if _from_bits(ptr_bits) >= length:
                ptr_bits = [0] * len(ptr_bits)
            dev.write_cell(self.bram[_from_bits(ptr_bits)], new_word)
            if acc is not None:
                acc = (acc + new_word * MAC_COEFF) & M32  # DSP slice multiply-add
        for cell, b in zip(self.ff, ptr_bits):
            dev.user_ff[cell] = b
        if acc is not None:
            dev.user_dsp[self.dsp[0]] = acc


# ---------------------------------------------------------------------------
# device-facing operations


def load_design(dev, design: TenantDesign) -> LoadedDesign:
    if design.slot_id in dev.designs:
        raise SlotOverlap(f"slot {design.slot_id} already has a design loaded")
    if design.cells is None:
        entries = [e for e in dev.cell_map if e.slot_id == design.slot_id]
    else:
        missing = [c for c in design.cells if c not in dev.cells]
        if missing:
            raise BindingMismatch(f"cells {missing} are not in the device cell map")
        entries = [dev.cells[tuple(c)] for c in design.cells]
    if not entries:
        raise BindingMismatch(f"no cells bound to slot {design.slot_id}")
    taken = {c for loaded in dev.designs.values() for c in loaded.cell_ids}
    shared = [e.cell_id for e in entries if e.cell_id in taken]
    if shared:
        raise SlotOverlap(f"cells {shared} already belong to another loaded design")

    loaded = LoadedDesign(design, entries)
    loaded.install(dev, loaded.initial_state())
    dev.designs[design.slot_id] = loaded
    dev.update_lines.setdefault(design.slot_id, False)
    dev._emit("LOAD", design.slot_id, design.kind.value)
    return loaded


def _loaded(dev, slot) -> LoadedDesign:
    try:
        return dev.designs[slot]
    except KeyError:
        raise UnknownSlot(f"no design loaded in slot {slot!r}") from None


def set_update(dev, slot: str, asserted: bool):
    _loaded(dev, slot)
    dev.update_lines[slot] = bool(asserted)
    dev._emit("UPDATE", slot, int(bool(asserted)))


def read_state(dev, slot: str):
    return _loaded(dev, slot).read_state(dev)


def snapshot_state(dev, snapshot):
    """Design state encoded in a snapshot's frames, using the loaded binding."""
    return _loaded(dev, snapshot.slot_id).state_from_frames(dict(snapshot.frames))


# ---------------------------------------------------------------------------
# fixture files


def parse_tenants(text: str) -> list[TenantDesign]:
    """Parse tenant fixtures, one INI section per slot::

        [slot2]
        kind = lfsr8
        seed = 0x5A
        taps = 8,6,5,4          ; optional
        chain_len = 4           ; optional, BramChain only
        cells = slot2/lfsr[0], slot2/lfsr[1]   ; optional explicit binding
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    designs = []
    try:
        cp.read_string(text)
        for slot in cp.sections():
            sec = cp[slot]
            taps = tuple(int(t) for t in sec.get("taps", "").replace(",", " ").split())
            cells = None
            if "cells" in sec:
                cells = tuple(tuple(c.strip().split("/", 1)) for c in sec["cells"].split(",") if c.strip())
            designs.append(
                TenantDesign(
                    DesignKind(sec["kind"].strip().lower()),
                    slot,
                    DesignParams(int(sec.get("seed", "1"), 0), taps, int(sec.get("chain_len", "0"))),
                    cells,
                )
            )
    except (configparser.Error, KeyError, ValueError) as exc:
        raise ConfigFileError(f"bad tenant file: {exc}") from exc
    return designs


def load_tenants(path) -> list[TenantDesign]:
    return parse_tenants(Path(path).read_text())
