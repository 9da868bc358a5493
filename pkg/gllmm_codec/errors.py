"""Exceptions raised by gllmm_codec."""


class GllmmCodecError(Exception):
    pass


class ShapeError(GllmmCodecError):
    pass


class ParameterError(GllmmCodecError):
    pass


class ConfigError(GllmmCodecError):
    pass


class StateError(GllmmCodecError):
    pass


class WeightFileError(GllmmCodecError):
    pass


class EncodeError(GllmmCodecError):
    pass


class DecodeError(GllmmCodecError):
    pass


class BitstreamError(DecodeError):
    pass
