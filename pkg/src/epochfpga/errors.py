"""Exception hierarchy shared by every module in the package."""


class EpochError(Exception):
    """Base class for all errors raised by epochfpga."""


# -- codec ------------------------------------------------------------------

class CodecError(EpochError, ValueError):
    pass


class FieldOutOfRange(CodecError):
    pass


class ReservedBitsSet(CodecError):
    pass


class UnknownBlockType(CodecError):
    pass


class FrameLengthError(CodecError):
    pass


class InvalidPacketHeader(CodecError):
    pass


class TruncatedPayload(CodecError):
    pass


class OrphanType2(CodecError):
    pass


class PayloadCountMismatch(CodecError):
    pass


class SyncNotFound(CodecError):
    pass


class LengthNotWordMultiple(CodecError):
    pass


class MalformedLine(CodecError):
    def __init__(self, line_no, content, reason=""):
        self.line_no = line_no
        self.content = content
        msg = f"line {line_no}: malformed logic-location record {content!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


# -- fabric -----------------------------------------------------------------

class FabricError(EpochError):
    pass


class CellOutsideGeometry(FabricError):
    pass


class InvalidCellBinding(FabricError):
    pass


class InvalidFrameAddress(FabricError):
    pass


class IdcodeMismatch(FabricError):
    pass


class NotSynced(FabricError):
    pass


class CrcMismatch(FabricError):
    pass


class MissingPaddingFrame(FabricError):
    pass


class WriteWhileNotWcfg(FabricError):
    pass


class ReadbackNotArmed(FabricError):
    pass


class CountMismatch(FabricError):
    pass


class ConfigFileError(EpochError):
    pass


# -- tenants ----------------------------------------------------------------

class TenantError(EpochError):
    pass


class SlotOverlap(TenantError):
    pass


class UnknownSlot(TenantError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class BindingMismatch(TenantError):
    pass


# -- controller -------------------------------------------------------------

class ControllerError(EpochError):
    pass


class CountOverflow(ControllerError):
    pass


class NotABramFrame(ControllerError):
    pass


class RegionOverflow(ControllerError):
    pass


class RegionOverlap(ControllerError):
    pass


class UnknownRegion(ControllerError):
    pass


class GeometryMismatch(ControllerError):
    pass


class SnapshotFormatError(ControllerError):
    pass


class GoldenMismatch(EpochError):
    def __init__(self, line_no, expected, actual):
        self.line_no = line_no
        self.expected = expected
        self.actual = actual
        super().__init__(f"line {line_no}: expected {expected}, got {actual}")


class ScriptError(EpochError):
    def __init__(self, line_no, content, reason):
        self.line_no = line_no
        self.content = content
        self.reason = reason
        super().__init__(f"script line {line_no}: {reason}: {content!r}")
