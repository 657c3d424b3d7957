"""Bundled demo fixtures: a small Zynq-like geometry and the benchmark cell maps."""

from __future__ import annotations

from importlib import resources

from epochfpga.bitcodec import parse_logic_location
from epochfpga.fabricsim import DeviceGeometry, DeviceModel, parse_geometry, start_clock
from epochfpga.tenants import TenantDesign, load_design, parse_tenants, set_update

DATA = resources.files("epochfpga") / "data"

GEOMETRY_FILE = "demo_geometry.ini"
COUNTERS_CELLMAP = "counters.ll"
BENCH_CELLMAP = "bench.ll"
BENCH_TENANTS = "bench_tenants.ini"


def data_text(name: str) -> str:
    return (DATA / name).read_text()


def demo_geometry() -> DeviceGeometry:
    return parse_geometry(data_text(GEOMETRY_FILE))


def demo_cell_map(name: str = BENCH_CELLMAP):
    return parse_logic_location(data_text(name))


def bench_tenants() -> dict[str, TenantDesign]:
    return {d.slot_id: d for d in parse_tenants(data_text(BENCH_TENANTS))}


def bench_device(slots=None, *, running=True, update=True, **kwargs) -> DeviceModel:
    """Device with the benchmark designs loaded into ``slots`` (default: all)."""
    dev = DeviceModel(demo_geometry(), demo_cell_map(), **kwargs)
    designs = bench_tenants()
    for slot in slots or designs:
        load_design(dev, designs[slot])
        set_update(dev, slot, update)
    if running:
        start_clock(dev)
    return dev
