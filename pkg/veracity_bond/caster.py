"""Cast result tables to their mojap metadata schema.

Golden tables are read as strings (so "<1e-10" sentinels survive) and then
cast column by column to the types their metadata declares.
"""
from copy import deepcopy
from typing import List, Union

import numpy as np
import pandas as pd
from mojap_metadata import Metadata

from veracity_bond.utils import VeracityBondError

_allowed_type_categories = ["integer", "boolean", "string", "float"]

_bool_strings = {"true": True, "false": False, "1": True, "0": False}


class TableCastError(VeracityBondError):
    pass


def convert_to_integer_series(s: pd.Series) -> pd.Series:
    return pd.to_numeric(s, errors="raise").astype(pd.Int64Dtype())


def convert_to_float_series(s: pd.Series) -> pd.Series:
    return pd.to_numeric(s, errors="raise").astype(np.float64)


def convert_to_string_series(s: pd.Series) -> pd.Series:
    return s.astype(pd.StringDtype())


def convert_to_bool_series(s: pd.Series) -> pd.Series:
    if pd.api.types.is_bool_dtype(s):
        return s.astype(pd.BooleanDtype())

    def to_bool(value):
        if pd.isna(value):
            return pd.NA
        key = str(value).strip().lower()
        if key not in _bool_strings:
            raise ValueError(f"{value!r} is not a boolean")
        return _bool_strings[key]

    return s.map(to_bool).astype(pd.BooleanDtype())


_converters = {
    "integer": convert_to_integer_series,
    "float": convert_to_float_series,
    "string": convert_to_string_series,
    "boolean": convert_to_bool_series,
}


def cast_column_to_schema(s: pd.Series, metacol: dict) -> pd.Series:
    if "type_category" not in metacol:
        tmp_meta = Metadata(columns=[metacol])
        tmp_meta.set_col_type_category_from_types()
        metacol = tmp_meta.get_column(metacol["name"])

    category = metacol["type_category"]
    if category not in _converters:
        raise TableCastError(
            f"meta type_category must be one of {_allowed_type_categories}. "
            f"Got {category} from column {metacol['name']}"
        )
    try:
        return _converters[category](s)
    except (ValueError, TypeError) as e:
        raise TableCastError(
            f"Failed conversion - name: {metacol['name']} | "
            f"type_category: {category} | type: {metacol.get('type')}: {e}"
        ) from e


def cast_table_to_schema(
    df: pd.DataFrame,
    metadata: Union[Metadata, dict],
    drop_columns: List[str] = None,
) -> pd.DataFrame:
    """Cast every metadata column of ``df`` and return them in metadata order.

    Columns not in the metadata are dropped, as are ``drop_columns``.
    """
    drop_columns = drop_columns or []
    if isinstance(metadata, Metadata):
        meta = metadata.to_dict()
    elif isinstance(metadata, dict):
        if "columns" not in metadata:
            raise TableCastError('metadata missing a "columns" key')
        Metadata.from_dict(metadata)
        meta = deepcopy(metadata)
    else:
        raise TableCastError(
            f"Input metadata must be of type Metadata or dict got {type(metadata)}"
        )

    df = df.copy()
    columns = [c for c in meta["columns"] if c["name"] not in drop_columns]
    missing = [c["name"] for c in columns if c["name"] not in df.columns]
    if missing:
        raise TableCastError(f"Columns {missing} not in table")
    for c in columns:
        df[c["name"]] = cast_column_to_schema(df[c["name"]], c)
    return df[[c["name"] for c in columns]]
