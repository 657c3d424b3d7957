"""Vendor-independent FPGA preemption: frame codec, configuration fabric
model and a save/restore controller driven over a PCAP-style port."""

from epochfpga.bitcodec import (
    BlockType,
    ConfigPacket,
    ElementKind,
    Frame,
    FrameAddress,
    LogicLocationEntry,
    far_decode,
    far_encode,
    packet_decode,
    packet_encode,
    parse_container,
    parse_logic_location,
)
from epochfpga.errors import EpochError

__version__ = "0.1.0"

__all__ = [
    "BlockType",
    "ConfigPacket",
    "ElementKind",
    "EpochError",
    "Frame",
    "FrameAddress",
    "LogicLocationEntry",
    "far_decode",
    "far_encode",
    "packet_decode",
    "packet_encode",
    "parse_container",
    "parse_logic_location",
]
