import os
import sys
import warnings
from abc import ABC, abstractmethod
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, List, Optional, Union

import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq
import smart_open
from mojap_metadata import Metadata
from mojap_metadata.converters.arrow_converter import ArrowConverter

from veracity_bond.caster import cast_table_to_schema
from veracity_bond.utils import (
    FileFormat,
    is_s3_filepath,
    pick_engine,
    validate_and_enrich_metadata,
)

STDOUT = "-"

MetadataLike = Optional[Union[Metadata, dict]]
Tables = Union[pd.DataFrame, Iterable[pd.DataFrame]]


def _ensure_parent(output_path: Union[IO, str]) -> None:
    if not isinstance(output_path, str) or is_s3_filepath(output_path):
        return
    parent = os.path.dirname(output_path)
    if parent:
        os.makedirs(parent, exist_ok=True)


@contextmanager
def _text_sink(output_path: Union[IO, str]) -> Iterator[IO]:
    if output_path == STDOUT:
        yield sys.stdout
    elif isinstance(output_path, str):
        _ensure_parent(output_path)
        with smart_open.open(output_path, "w") as f:
            yield f
    else:
        yield output_path


def _chunks(df: Tables) -> Iterator[pd.DataFrame]:
    return iter([df]) if isinstance(df, pd.DataFrame) else iter(df)


def _warn_override(name: str, given, configured) -> None:
    warnings.warn(
        f"{name}={given!r} overrides this writer's configured {name} "
        f"({configured!r})"
    )


@dataclass
class TableWriter(ABC):
    """Writes a result table, or an iterator of chunks of one, to a path or stream.

    Paths may be local or S3; "-" means stdout for the text formats.
    """

    copy: bool = True
    drop_columns: List[str] = field(default_factory=list)

    @abstractmethod
    def write(
        self,
        df: Tables,
        output_path: Union[IO, str],
        metadata: MetadataLike = None,
        **kwargs,
    ) -> None:
        ...

    def _prepare(self, df: pd.DataFrame, metadata: MetadataLike) -> pd.DataFrame:
        if metadata is not None:
            return cast_table_to_schema(df, metadata, drop_columns=self.drop_columns)
        out = df.copy() if self.copy else df
        return out.drop(columns=self.drop_columns) if self.drop_columns else out


@dataclass
class TextTableWriter(TableWriter):
    # provenance lines, emitted before the first chunk where the format allows
    header_comments: List[str] = field(default_factory=list)

    def write(
        self,
        df: Tables,
        output_path: Union[IO, str],
        metadata: MetadataLike = None,
        **kwargs,
    ) -> None:
        if kwargs.pop("mode", "w") != "w":
            raise ValueError("Result tables are only ever written with mode='w'")
        with _text_sink(output_path) as f:
            for i, chunk in enumerate(_chunks(df)):
                self._emit(self._prepare(chunk, metadata), f, i == 0, dict(kwargs))

    @abstractmethod
    def _emit(self, df: pd.DataFrame, f: IO, first: bool, options: dict) -> None:
        ...


@dataclass
class PandasCsvWriter(TextTableWriter):
    """CSV with "# " prefixed provenance lines above the header row."""

    drop_index = True

    def _emit(self, df: pd.DataFrame, f: IO, first: bool, options: dict) -> None:
        wanted = not self.drop_index
        if options.setdefault("index", wanted) != wanted:
            _warn_override("index", options["index"], wanted)
        if first:
            f.writelines(f"# {line}\n" for line in self.header_comments)
        df.to_csv(f, header=first, lineterminator="\n", **options)


@dataclass
class PandasJsonWriter(TextTableWriter):
    """JSON lines, one record per row. Header comments are dropped."""

    def _emit(self, df: pd.DataFrame, f: IO, first: bool, options: dict) -> None:
        for key, required in (("orient", "records"), ("lines", True)):
            if options.pop(key, required) != required:
                raise ValueError(f"JSON tables are written with {key}={required!r}")
        if df.empty:
            return
        text = df.to_json(orient="records", lines=True, **options)
        f.write(text if text.endswith("\n") else text + "\n")


@dataclass
class AlignedTextWriter(TextTableWriter):
    """Column-aligned plain text for reading in a terminal."""

    def _emit(self, df: pd.DataFrame, f: IO, first: bool, options: dict) -> None:
        if first:
            f.writelines(f"{line}\n" for line in self.header_comments)
        options.setdefault("index", False)
        f.write(df.to_string(header=first, **options) + "\n")


@dataclass
class ArrowParquetWriter(TableWriter):
    compression: str = "SNAPPY"
    version: str = "2.6"

    def write(
        self,
        df: Tables,
        output_path: Union[IO, str],
        metadata: MetadataLike = None,
        **kwargs,
    ) -> None:
        if output_path == STDOUT:
            raise ValueError("Parquet is binary and cannot be written to stdout")

        kwargs.setdefault("version", self.version)
        kwargs["compression"] = kwargs.get("compression", self.compression).upper()
        if kwargs["compression"] != self.compression.upper():
            _warn_override("compression", kwargs["compression"], self.compression)

        schema = None
        if metadata:
            schema = ArrowConverter().generate_from_meta(
                validate_and_enrich_metadata(metadata)
            )

        _ensure_parent(output_path)
        chunks = _chunks(df)
        first = pa.Table.from_pandas(
            self._prepare(next(chunks), metadata), schema=schema, preserve_index=False
        )
        with smart_open.open(output_path, "wb") as f:
            with pq.ParquetWriter(f, first.schema, **kwargs) as parquet_file:
                parquet_file.write_table(first)
                for chunk in chunks:
                    table = pa.Table.from_pandas(
                        self._prepare(chunk, metadata),
                        schema=first.schema,
                        preserve_index=False,
                    )
                    parquet_file.write_table(table)


# the first engine listed for a format is its default
WRITERS = {
    "pandas": {
        FileFormat.CSV: PandasCsvWriter,
        FileFormat.JSON: PandasJsonWriter,
        FileFormat.TEXT: AlignedTextWriter,
    },
    "arrow": {
        FileFormat.PARQUET: ArrowParquetWriter,
    },
}


def get_writer_for_file_format(
    file_format: Union[FileFormat, str], writer_engine: str = None
) -> TableWriter:
    return pick_engine(WRITERS, file_format, writer_engine, "Writing")
