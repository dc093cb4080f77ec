"""Shared exception types."""


class FBBSError(Exception):
    pass


class InvalidAngle(FBBSError):
    pass


class DimensionError(FBBSError):
    pass


class DegenerateChannel(FBBSError):
    pass


class ConfigError(FBBSError):
    pass


class FormatError(FBBSError):
    pass


class EmptyMask(FBBSError):
    pass
