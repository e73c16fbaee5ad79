import math

BACKBONES = ["small", "resnet18"]
OPTIMIZERS = ["sgd", "momentum", "adam"]


def positive_int(value, *args):
    """
    Validate a strictly positive integer.
    Returns True if valid, otherwise an error message.
    """
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        return f"expected a positive integer, got `{value}`"
    return True


def non_negative_int(value, *args):
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        return f"expected a non-negative integer, got `{value}`"
    return True


def positive_float(value, *args):
    if not _is_real(value) or not value > 0:
        return f"expected a positive number, got `{value}`"
    return True


def non_negative_float(value, *args):
    if not _is_real(value) or value < 0:
        return f"expected a non-negative number, got `{value}`"
    return True


def unit_interval(value, *args):
    if not _is_real(value) or not 0 <= value < 1:
        return f"expected a number in [0, 1), got `{value}`"
    return True


def backbone_id(value, *args):
    if value in BACKBONES:
        return True
    return f"invalid backbone_id '{value}'. Valid options are: {', '.join(BACKBONES)}"


def optimizer_name(value, *args):
    if value in OPTIMIZERS:
        return True
    return f"invalid optimizer '{value}'. Valid options are: {', '.join(OPTIMIZERS)}"


def stage_widths(value, *args):
    """
    Validate the per-block channel widths of the small backbone:
    four positive integers (the fifth block always outputs `channels`).
    """
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        return f"expected 4 stage widths, got `{value}`"
    if any(positive_int(width) is not True for width in value):
        return f"stage widths must be positive integers, got `{value}`"
    return True


def int_pair(value, *args):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        return f"expected a pair of integers, got `{value}`"
    if any(non_negative_int(item) is not True for item in value):
        return f"expected non-negative integers, got `{value}`"
    return True


def real_range(value, *args):
    """Validate a [low, high] pair with low <= high."""
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        return f"expected a [low, high] pair, got `{value}`"
    low, high = value
    if not (_is_real(low) and _is_real(high)) or low > high:
        return f"expected low <= high, got `{value}`"
    return True


def rgb_color(value, *args):
    if value is None:
        return True
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 3
        or any(non_negative_int(channel) is not True or channel > 255 for channel in value)
    ):
        return f"expected an RGB triple of 0..255 integers, got `{value}`"
    return True


def _is_real(value):
    return (
        isinstance(value, (int, float))
        and not isinstance(value, bool)
        and math.isfinite(value)
    )
