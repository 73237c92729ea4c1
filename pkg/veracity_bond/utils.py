import os
from copy import deepcopy
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum, auto
from fractions import Fraction
from pathlib import Path
from typing import IO, Callable, Dict, Optional, Union

from mojap_metadata import Metadata


class VeracityBondError(Exception):
    """Base class for every error raised by this package."""


class FileFormatNotFound(VeracityBondError):
    pass


class EngineNotImplementedError(VeracityBondError):
    pass


class FileFormat(Enum):
    PARQUET = auto()
    JSON = auto()
    CSV = auto()
    TEXT = auto()

    @classmethod
    def from_string(cls, string: str) -> "FileFormat":
        """Match a format name or a suffix chain such as "snappy.parquet"."""
        name = string.strip().upper()
        for fmt, markers in _FORMAT_MARKERS:
            if any(marker in name for marker in markers):
                return fmt
        raise ValueError(f"No table format matches {string!r}")


# first match wins
_FORMAT_MARKERS = [
    (FileFormat.PARQUET, ("PARQUET",)),
    (FileFormat.JSON, ("JSON",)),
    (FileFormat.CSV, ("CSV",)),
    (FileFormat.TEXT, ("TEXT", "TXT")),
]

_SUFFIX_FORMATS = {
    "jsonl": FileFormat.JSON,
    "ndjson": FileFormat.JSON,
    "json": FileFormat.JSON,
    "csv": FileFormat.CSV,
    "parquet": FileFormat.PARQUET,
    "txt": FileFormat.TEXT,
    "text": FileFormat.TEXT,
}
_COMPRESSION_SUFFIXES = {"tar", "gz", "zip", "gzip", "brotli", "snappy"}


def is_s3_filepath(output_file: Union[IO, str]) -> bool:
    return isinstance(output_file, str) and output_file.startswith("s3://")


def infer_file_format(output_file: str) -> FileFormat:
    """Infer a table format from a path, ignoring compression suffixes."""
    suffixes = Path(os.path.basename(output_file)).suffixes
    for suffix in reversed(suffixes):
        ext = suffix.lstrip(".").lower()
        if ext in _COMPRESSION_SUFFIXES:
            continue
        if ext in _SUFFIX_FORMATS:
            return _SUFFIX_FORMATS[ext]
        break
    raise FileFormatNotFound(f"Could not infer file format from: {output_file}")


def validate_and_enrich_metadata(metadata: Union[Metadata, dict]) -> Metadata:
    """Copy of the metadata with every column's type_category filled in."""
    enriched = deepcopy(Metadata.from_infer(metadata))
    enriched.set_col_type_category_from_types()
    return enriched


def parse_rational(value: Union[str, int, float, Fraction, Decimal]) -> Fraction:
    """Parse "p/q", a decimal string or a number into an exact Fraction.

    Floats are converted through their shortest repr so 0.1 becomes 1/10.
    """
    if isinstance(value, bool):
        raise ValueError(f"{value!r} is not a rational")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, (int, Decimal)):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction("".join(value.split()))
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"{value!r} is not a rational of the form p/q")
    raise ValueError(f"{value!r} is not a rational")


def format_rational(value: Fraction) -> str:
    return f"{value.numerator}/{value.denominator}"


def _round_half_up(value: Fraction, places: int = 0) -> Decimal:
    d = Decimal(value.numerator) / Decimal(value.denominator)
    return d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


def humanize_count(value: Union[int, Fraction]) -> str:
    """Compact display used in capacity tables: 22, 547K, 2.6M, 4.0B."""
    value = Fraction(value)
    if value < 1000:
        return str(_round_half_up(value))
    if value < 1_000_000:
        return f"{_round_half_up(value / 1000)}K"
    if value < 1_000_000_000:
        return f"{_round_half_up(value / 1_000_000, 1)}M"
    return f"{_round_half_up(value / 1_000_000_000, 1)}B"


def pick_engine(
    registry: Dict[str, Dict[FileFormat, Callable]],
    file_format: Union[FileFormat, str],
    engine: Optional[str],
    action: str,
):
    """Instantiate the handler ``registry[engine][file_format]``.

    With no engine the first one registered for the format is used.
    """
    if isinstance(file_format, str):
        file_format = FileFormat.from_string(file_format)
    capable = [name for name, handlers in registry.items() if file_format in handlers]
    if not capable:
        raise ValueError(f"{action} {file_format.name} tables is not supported")
    name = (engine or capable[0]).casefold()
    if name not in capable:
        raise EngineNotImplementedError(
            f"No {name} engine for {action.lower()} {file_format.name} tables; "
            f"available: {', '.join(capable)}"
        )
    return registry[name][file_format]()


def resolve_file_format(
    path: Union[IO, str], file_format: Union[FileFormat, str, None]
) -> FileFormat:
    """An explicit format wins; otherwise infer it from a real path's suffix."""
    if isinstance(file_format, FileFormat):
        return file_format
    if file_format is not None:
        return FileFormat.from_string(file_format)
    if not isinstance(path, str) or path == "-":
        raise FileFormatNotFound("Streams and stdout need an explicit file_format")
    return infer_file_format(path)
