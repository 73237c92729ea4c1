from typing import IO, Iterable, Union

from veracity_bond._writers import (
    STDOUT,
    AlignedTextWriter,
    ArrowParquetWriter,
    MetadataLike,
    PandasCsvWriter,
    PandasJsonWriter,
    Tables,
    get_writer_for_file_format,
)
from veracity_bond.utils import FileFormat, resolve_file_format

__all__ = ["STDOUT", "write", "csv", "json", "text", "parquet"]


def write(
    df: Tables,
    output_path: Union[IO, str],
    metadata: MetadataLike = None,
    file_format: Union[FileFormat, str] = None,
    writer_engine: str = None,
    header_comments: Iterable[str] = None,
    **kwargs,
) -> None:
    """Write a result table as CSV, JSON lines, aligned text or Parquet.

    ``output_path`` may be "-" for stdout or an open text stream, in which
    case ``file_format`` is required. ``header_comments`` are provenance lines
    placed above CSV and text tables; the other formats have nowhere to put
    them.
    """
    fmt = resolve_file_format(output_path, file_format)
    table_writer = get_writer_for_file_format(fmt, writer_engine)
    if header_comments and hasattr(table_writer, "header_comments"):
        table_writer.header_comments = list(header_comments)
    table_writer.write(df, output_path, metadata=metadata, **kwargs)


csv = PandasCsvWriter()
json = PandasJsonWriter()
text = AlignedTextWriter()
parquet = ArrowParquetWriter()
