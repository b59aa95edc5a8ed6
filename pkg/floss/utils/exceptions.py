"""
Custom exceptions for FLOSS
"""


class ConfigurationError(Exception):
    """Exception for configuration-related errors"""
    pass


class ValidationError(Exception):
    """Exception for input validation errors (shapes, ranges, permutations)"""
    pass


class DataError(Exception):
    """Exception for synthetic data generation failures"""
    pass


class NumericalError(Exception):
    """Exception for non-finite values in training or sampling"""
    pass


class AudioIOError(Exception):
    """Exception for WAV reading/writing errors"""
    pass


class CheckpointError(Exception):
    """Exception for checkpoint loading/saving errors"""
    pass
