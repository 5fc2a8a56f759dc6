"""Exception hierarchy shared by every camo module."""


class CamoError(Exception):
    """Base class for all camo errors."""


# pcap / packet model
class MalformedPcap(CamoError):
    pass


class UnsupportedVersion(CamoError):
    pass


# recovery header and engine
class DecodeError(CamoError):
    pass


class ChecksumMismatch(DecodeError):
    pass


class ReservedBitsSet(DecodeError):
    pass


class BadTechnique(DecodeError):
    pass


class LengthTooSmall(CamoError):
    pass


class Oversize(CamoError):
    pass


class SeqDesync(DecodeError):
    """A header chain decoded cleanly but does not fit the session profile."""


class OrphanFragment(CamoError):
    def __init__(self, message, groups=()):
        super().__init__(message)
        self.groups = tuple(groups)


class ProfileError(CamoError):
    pass


# features
class EmptyDataset(CamoError):
    pass


class DegenerateLabels(CamoError):
    pass


class BadK(CamoError):
    pass


class MalformedCsv(CamoError):
    pass


# models
class DimensionMismatch(CamoError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class EmptyNode(CamoError):
    pass


class NumericOverflow(CamoError):
    pass


class ClassTooSmall(CamoError):
    pass


class EmptyConfusion(CamoError):
    pass


class ScenarioError(CamoError):
    pass
