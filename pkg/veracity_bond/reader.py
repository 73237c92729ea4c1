from typing import IO, Union

import pandas as pd

from veracity_bond._readers import (
    ArrowParquetReader,
    MetadataLike,
    PandasCsvReader,
    PandasJsonReader,
    get_reader_for_file_format,
)
from veracity_bond.utils import FileFormat, resolve_file_format


def read(
    input_path: Union[IO, str],
    metadata: MetadataLike = None,
    file_format: Union[FileFormat, str] = None,
    reader_engine: str = None,
    **kwargs,
) -> pd.DataFrame:
    """Load a CSV, JSON lines or Parquet result table.

    The format comes from ``file_format`` or, for paths, the suffix. Given
    ``metadata`` the table is cast to it column by column.
    """
    fmt = resolve_file_format(input_path, file_format)
    table_reader = get_reader_for_file_format(fmt, reader_engine)
    return table_reader.read(input_path, metadata=metadata, **kwargs)


csv = PandasCsvReader()
json = PandasJsonReader()
parquet = ArrowParquetReader()
