import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import IO, Callable, List, Optional, Union

import pandas as pd
import pyarrow.parquet as pq
import smart_open
from mojap_metadata import Metadata

from veracity_bond.caster import cast_table_to_schema
from veracity_bond.utils import (
    FileFormat,
    pick_engine,
    validate_and_enrich_metadata,
)

MetadataLike = Optional[Union[Metadata, dict]]


@dataclass
class TableReader(ABC):
    """Loads one result table into pandas, optionally cast to a metadata schema."""

    drop_columns: List[str] = field(default_factory=list)

    @abstractmethod
    def read(
        self, input_path: Union[IO, str], metadata: MetadataLike = None, **kwargs
    ) -> pd.DataFrame:
        ...

    def _cast(self, df: pd.DataFrame, metadata: MetadataLike) -> pd.DataFrame:
        if metadata is None:
            return df
        schema = validate_and_enrich_metadata(metadata)
        return cast_table_to_schema(df, schema, drop_columns=self.drop_columns)


def _through_smart_open(
    parse: Callable, input_path: Union[IO, str], mode: str, **kwargs
):
    if not isinstance(input_path, str):
        return parse(input_path, **kwargs)
    with smart_open.open(input_path, mode) as f:
        return parse(f, **kwargs)


@dataclass
class PandasCsvReader(TableReader):
    """CSV through pandas. Lines starting with # are provenance and skipped."""

    def read(
        self, input_path: Union[IO, str], metadata: MetadataLike = None, **kwargs
    ) -> pd.DataFrame:
        """
        With metadata every column is read as a string and then cast, so
        values such as "<1e-10" reach the caster untouched.
        """
        kwargs.setdefault("comment", "#")
        if metadata:
            kwargs.setdefault("dtype", str)
            kwargs.setdefault("keep_default_na", False)
        df = _through_smart_open(pd.read_csv, input_path, "r", **kwargs)
        return self._cast(df, metadata)


@dataclass
class PandasJsonReader(TableReader):
    """JSON lines, one record per line."""

    def read(
        self, input_path: Union[IO, str], metadata: MetadataLike = None, **kwargs
    ) -> pd.DataFrame:
        forced = {"lines": True, "orient": "records"}
        for key, value in forced.items():
            if kwargs.get(key, value) != value:
                warnings.warn(f"JSON tables are always read with {key}={value!r}")
        kwargs.update(forced)
        if metadata:
            kwargs.setdefault("dtype", False)
        df = _through_smart_open(pd.read_json, input_path, "r", **kwargs)
        return self._cast(df, metadata)


@dataclass
class ArrowParquetReader(TableReader):
    def read(
        self, input_path: Union[IO, str], metadata: MetadataLike = None, **kwargs
    ) -> pd.DataFrame:
        table = _through_smart_open(pq.read_table, input_path, "rb", **kwargs)
        return self._cast(table.to_pandas(), metadata)


# the first engine listed for a format is its default
READERS = {
    "pandas": {
        FileFormat.CSV: PandasCsvReader,
        FileFormat.JSON: PandasJsonReader,
    },
    "arrow": {
        FileFormat.PARQUET: ArrowParquetReader,
    },
}


def get_reader_for_file_format(
    file_format: Union[FileFormat, str], reader_engine: str = None
) -> TableReader:
    return pick_engine(READERS, file_format, reader_engine, "Reading")
