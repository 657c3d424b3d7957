"""Command-line front end: scenarios, FAR decoding and template dumps.

Scenario scripts hold one step per line::

    load slot0 upcounter4          # optional seed=0x.. taps=8,6,5,4
    tick 3 update=1                # update= sets every loaded slot's update line
    save slot0
    restore slot0
    assert slot0 0x3               # BramChain: assert slot4 ptr=1 acc=0x...
    blank slot0
    check slot0                    # compare against the software oracle

Exit status is 0 only when every assertion held and no device error occurred.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from epochfpga import demo
from epochfpga.bitcodec import Frame, as_far, far_decode, parse_logic_location
from epochfpga.epochctl import (
    RESTORE,
    SAVE,
    DramStore,
    TimingModel,
    blank_slot,
    context_restore,
    context_save,
    estimate_timing,
    format_template,
    parse_template,
    readback_template,
    write_template,
)
from epochfpga.errors import EpochError, GoldenMismatch, ScriptError
from epochfpga.fabricsim import DeviceModel, load_geometry, start_clock
from epochfpga.tenants import (
    ChainState,
    DesignKind,
    DesignParams,
    TenantDesign,
    load_design,
    oracle_replay,
    read_state,
    set_update,
)

COUNTER_SCRIPT = """\
load slot0 upcounter4
load slot1 downcounter4
assert slot0 0x0
assert slot1 0xF
tick 3 update=1
assert slot0 0x3
assert slot1 0xC
save slot0
save slot1
tick 4
assert slot0 0x7
assert slot1 0x8
restore slot0
restore slot1
assert slot0 0x3
assert slot1 0xC
"""

BRAM_SCRIPT = """\
load slot4 bramchain seed=0xC0FFEE00
tick 5
check slot4
save slot4
tick 7
check slot4
restore slot4
check slot4
tick 3
check slot4
"""

STEP_ARITY = {"load": (2, None), "tick": (1, 2), "save": (1, 1), "restore": (1, 1),
              "assert": (2, None), "blank": (1, 1), "check": (1, 1)}


@dataclass(frozen=True)
class ScenarioStep:
    line_no: int
    op: str
    args: tuple
    text: str


def parse_script(text: str) -> list[ScenarioStep]:
    steps = []
    loaded = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        op, *args = body.split()
        if op not in STEP_ARITY:
            raise ScriptError(line_no, raw, f"unknown step {op!r}")
        lo, hi = STEP_ARITY[op]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ScriptError(line_no, raw, f"wrong number of arguments for {op}")
        if op == "load":
            try:
                DesignKind(args[1])
            except ValueError:
                raise ScriptError(line_no, raw, f"unknown design kind {args[1]!r}") from None
            loaded.add(args[0])
        elif op == "tick":
            if not args[0].isdigit() or (len(args) == 2 and args[1] not in ("update=0", "update=1")):
                raise ScriptError(line_no, raw, "expected: tick <n> [update=0|1]")
        elif args[0] not in loaded:
            raise ScriptError(line_no, raw, f"slot {args[0]} is used before it is loaded")
        steps.append(ScenarioStep(line_no, op, tuple(args), body))
    return steps


def _keyvals(tokens, line_no, text):
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ScriptError(line_no, text, f"expected key=value, got {tok!r}")
        out[key] = value
    return out


def _format_state(state):
    if isinstance(state, ChainState):
        words = ",".join(f"0x{w:08X}" for w in state.words)
        acc = "-" if state.acc is None else f"0x{state.acc:08X}"
        return f"ptr={state.ptr} words={words} acc={acc}"
    return f"0x{state:X}"


@dataclass
class Record:
    line: int
    step: str
    slot: str | None
    cycle: int
    result: str
    modeled_us: float | None = None
    what_if_us: float | None = None
    failed: bool = False

    def as_dict(self):
        d = {"line": self.line, "step": self.step, "slot": self.slot, "cycle": self.cycle,
             "result": self.result, "modeled_us": self.modeled_us}
        if self.what_if_us is not None:
            d["what_if_us"] = self.what_if_us
        return d


@dataclass
class ScenarioRunner:
    """Executes parsed steps against one device and tracks oracle expectations."""

    dev: DeviceModel
    timing: TimingModel = field(default_factory=TimingModel)
    what_if: TimingModel | None = None
    bram_fixup: bool = True
    gsr: bool = True
    blank_before_restore: bool = False
    records: list = field(default_factory=list)
    expected: dict = field(default_factory=dict)
    saved_expected: dict = field(default_factory=dict)

    def __post_init__(self):
        self.store = DramStore()
        self._next_base = 0

    @property
    def failures(self):
        return [r for r in self.records if r.failed]

    def run(self, steps):
        for step in steps:
            try:
                self._run_step(step)
            except ScriptError:
                raise
            except EpochError as exc:
                slot = step.args[0] if step.op not in ("tick",) else None
                self._record(step, slot, f"ERROR {type(exc).__name__}: {exc}", failed=True)
                break
        return self

    def _record(self, step, slot, result, failed=False, op=None, n_frames=0):
        modeled = what_if = None
        if op is not None:
            modeled = round(estimate_timing(self.timing, n_frames, op), 6)
            if self.what_if is not None:
                what_if = round(estimate_timing(self.what_if, n_frames, op), 6)
        self.records.append(Record(step.line_no, step.text, slot, self.dev.cycle, result, modeled, what_if, failed))

    def _ensure_region(self, slot):
        if slot not in self.store.regions:
            region = self.store.allocate(slot, self._next_base, len(self.dev.slot_frames(slot)))
            self._next_base = -(-region.end // 0x10000) * 0x10000

    def _run_step(self, step):
        op, args = step.op, step.args
        dev = self.dev
        if op == "load":
            slot, kind = args[0], DesignKind(args[1])
            opts = _keyvals(args[2:], step.line_no, step.text)
            try:
                params = DesignParams(
                    seed=int(opts.get("seed", "1"), 0),
                    taps=tuple(int(t) for t in opts["taps"].split(",")) if "taps" in opts else (),
                    chain_len=int(opts.get("chain_len", "0")),
                )
            except ValueError as exc:
                raise ScriptError(step.line_no, step.text, str(exc)) from None
            loaded = load_design(dev, TenantDesign(kind, slot, params))
            set_update(dev, slot, True)
            self.expected[slot] = loaded.initial_state()
            self._record(step, slot, "loaded " + _format_state(self.expected[slot]))
        elif op == "tick":
            n = int(args[0])
            if len(args) == 2:
                for slot in dev.designs:
                    set_update(dev, slot, args[1] == "update=1")
            running = dev.clock_running
            dev.step_clock(n)
            if running:
                for slot, loaded in dev.designs.items():
                    self.expected[slot] = oracle_replay(
                        loaded.kind, loaded.params, self.expected[slot], n, dev.update_lines[slot]
                    )
            self._record(step, None, "ok" if running else "clock gated")
        elif op == "save":
            slot = args[0]
            self._ensure_region(slot)
            snap = context_save(dev, slot, self.store, bram_fixup=self.bram_fixup)
            self.saved_expected[slot] = self.expected[slot]
            self._record(step, slot, f"saved {len(snap.frames)} frames", op=SAVE, n_frames=len(snap.frames))
        elif op == "restore":
            slot = args[0]
            if slot not in self.saved_expected:
                raise ScriptError(step.line_no, step.text, f"slot {slot} has no saved snapshot")
            context_restore(dev, slot, self.store, gsr=self.gsr, blank_first=self.blank_before_restore)
            self.expected[slot] = self.saved_expected[slot]
            n = len(dev.slot_frames(slot))
            self._record(step, slot, f"restored {n} frames", op=RESTORE, n_frames=n)
        elif op == "blank":
            slot = args[0]
            blank_slot(dev, slot, gsr=self.gsr)
            self.expected[slot] = dev.designs[slot]._state_from(lambda cell: 0)
            self._record(step, slot, "blanked")
        elif op == "assert":
            self._assert(step)
        elif op == "check":
            slot = args[0]
            actual, want = read_state(dev, slot), self.expected[slot]
            ok = actual == want
            detail = _format_state(actual) if ok else f"FAIL oracle {_format_state(want)}, device {_format_state(actual)}"
            self._record(step, slot, detail, failed=not ok)

    def _assert(self, step):
        slot = step.args[0]
        actual = read_state(self.dev, slot)
        try:
            if isinstance(actual, ChainState):
                fields = {k: int(v, 0) for k, v in _keyvals(step.args[1:], step.line_no, step.text).items()}
                unknown = set(fields) - {"ptr", "acc"}
                if unknown:
                    raise ScriptError(step.line_no, step.text, f"unknown chain fields {sorted(unknown)}")
                ok = all(getattr(actual, k) == v for k, v in fields.items())
                want = " ".join(f"{k}=0x{v:X}" for k, v in fields.items())
            else:
                value = int(step.args[1], 0)
                ok, want = actual == value, f"0x{value:X}"
        except ValueError:
            raise ScriptError(step.line_no, step.text, "bad expected value") from None
        detail = _format_state(actual) if ok else f"FAIL expected {want}, got {_format_state(actual)}"
        self._record(step, slot, detail, failed=not ok)


# ---------------------------------------------------------------------------
# reports


def render_report(title, runner, as_json=False, timestamps=True) -> str:
    trace = [str(e) for e in runner.dev.trace]
    failures = runner.failures
    if as_json:
        doc = {"scenario": title, "records": [r.as_dict() for r in runner.records],
               "failures": len(failures), "trace": trace}
        if timestamps:
            doc["generated_at"] = datetime.now(timezone.utc).isoformat()
        return json.dumps(doc, indent=2) + "\n"
    lines = [f"# scenario: {title}"]
    if timestamps:
        lines.append(f"# generated: {datetime.now(timezone.utc).isoformat()}")
    for r in runner.records:
        timing = "" if r.modeled_us is None else f"  modeled_us={r.modeled_us:g}"
        if r.what_if_us is not None:
            timing += f"  what_if_us={r.what_if_us:g}"
        lines.append(f"{r.line:4d}  cycle={r.cycle:<6d} {r.step:<28s} {r.result}{timing}")
    lines.append(f"# {len(failures)} failure(s)" + (f"; first: line {failures[0].line}: {failures[0].result}" if failures else ""))
    lines.append("# trace")
    lines.extend(trace)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands


def _device(args, default_cellmap=demo.BENCH_CELLMAP) -> DeviceModel:
    geometry = load_geometry(args.geometry) if args.geometry else demo.demo_geometry()
    if args.cellmap:
        cells = parse_logic_location(Path(args.cellmap).read_text())
    else:
        cells = demo.demo_cell_map(default_cellmap)
    dev = DeviceModel(geometry, cells)
    start_clock(dev)
    return dev


def _run(args, title, script_text, default_cellmap=demo.BENCH_CELLMAP) -> int:
    steps = parse_script(script_text)
    dev = _device(args, default_cellmap)
    what_if = TimingModel().what_if(args.clock_hz) if args.clock_hz else None
    runner = ScenarioRunner(
        dev,
        what_if=what_if,
        bram_fixup=not args.no_bram_fixup,
        gsr=not args.skip_gsr,
        blank_before_restore=args.blank_before_restore,
    ).run(steps)
    sys.stdout.write(render_report(title, runner, args.json, not args.no_timestamps))
    if runner.failures:
        first = runner.failures[0]
        print(f"error: line {first.line} ({first.step}): {first.result}", file=sys.stderr)
        return 1
    return 0


def cmd_demo_counters(args) -> int:
    return _run(args, "counters", COUNTER_SCRIPT, demo.COUNTERS_CELLMAP)


def cmd_demo_bram(args) -> int:
    return _run(args, "bram-chain", BRAM_SCRIPT)


def cmd_run_script(args) -> int:
    path = Path(args.script)
    return _run(args, path.name, path.read_text())


def cmd_decode_far(args) -> int:
    fa = far_decode(int(args.word, 0))
    fields = {"block": fa.block_type.name, "bottom_half": int(fa.bottom_half), "row": fa.row,
              "column": fa.column, "minor": fa.minor}
    if args.json:
        print(json.dumps({"far": str(fa), **fields}))
    else:
        print(f"far={fa}")
        for k, v in fields.items():
            print(f"{k}={v}")
    return 0


def golden_check(dump: str, golden_text: str):
    """Raise GoldenMismatch at the first golden line whose word differs."""
    produced = parse_template(dump)
    expected = []
    for line_no, line in enumerate(golden_text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if body:
            expected.append((line_no, int(body, 16)))
    for i, (line_no, want) in enumerate(expected):
        if i >= len(produced):
            raise GoldenMismatch(line_no, f"0x{want:08X}", "end of template")
        if produced[i] != want:
            raise GoldenMismatch(line_no, f"0x{want:08X}", f"0x{produced[i]:08X}")
    if len(produced) > len(expected):
        raise GoldenMismatch(len(golden_text.splitlines()) + 1, "end of fixture", f"0x{produced[len(expected)]:08X}")


def render_template(kind, far, n_frames, idcode, next_far=None, glut_unmask=True, capture_ffs=True) -> str:
    if kind == "readback":
        header, footer = readback_template(far, n_frames, glut_unmask, capture_ffs)
        note = f"Frame Data Read: {(n_frames + 1) * 101} words read from the port"
        return format_template(header + footer, [(len(header), note)])
    rows = write_template(far, [Frame.zero()] * n_frames, next_far if next_far is not None else far, idcode)
    return format_template(rows)


def cmd_gen_template(args) -> int:
    geometry = load_geometry(args.geometry) if args.geometry else demo.demo_geometry()
    far = as_far(int(args.far, 0))
    idcode = int(args.idcode, 0) if args.idcode else geometry.idcode
    next_far = as_far(int(args.next_far, 0)) if args.next_far else None
    dump = render_template(args.kind, far, args.frames, idcode, next_far,
                           not args.no_glut_unmask, not args.no_capture)
    if args.golden_check:
        golden_check(dump, Path(args.golden_check).read_text())
        print(f"golden match: {args.golden_check}", file=sys.stderr)
    sys.stdout.write(dump)
    return 0


def _common(parser):
    parser.add_argument("--geometry", help="device geometry INI (default: bundled demo geometry)")
    parser.add_argument("--cellmap", help="logic-location file for the device cells")
    parser.add_argument("--clock-hz", type=float, help="report what-if timing at this port clock")
    parser.add_argument("--no-bram-fixup", action="store_true", help="skip clearing the BRAM readback markers")
    parser.add_argument("--skip-gsr", action="store_true", help="do not pulse GSR after restore or blank")
    parser.add_argument("--blank-before-restore", action="store_true", help="write all-zero frames before restoring")
    parser.add_argument("--json", action="store_true", help="machine-readable report")
    parser.add_argument("--no-timestamps", action="store_true", help="omit timestamps for byte-identical reports")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epochfpga", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-counters", help="up/down counter save and restore scenario")
    _common(p)
    p.set_defaults(func=cmd_demo_counters)

    p = sub.add_parser("demo-bram", help="BRAM chain save and restore scenario")
    _common(p)
    p.set_defaults(func=cmd_demo_bram)

    p = sub.add_parser("run-script", help="run a scenario script")
    p.add_argument("script")
    _common(p)
    p.set_defaults(func=cmd_run_script)

    p = sub.add_parser("decode-far", help="print the fields of a frame address")
    p.add_argument("word")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_decode_far)

    p = sub.add_parser("gen-template", help="dump a readback or write command template")
    p.add_argument("kind", choices=("readback", "write"))
    p.add_argument("--far", required=True)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--next-far")
    p.add_argument("--idcode")
    p.add_argument("--geometry")
    p.add_argument("--no-glut-unmask", action="store_true")
    p.add_argument("--no-capture", action="store_true")
    p.add_argument("--golden-check", metavar="FILE", help="compare against a fixture, exit 1 on mismatch")
    p.set_defaults(func=cmd_gen_template)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EpochError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
