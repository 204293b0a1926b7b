"""
Delimited-text ingestion and serialization.

Two input layouts are recognized from the header row:

* long: one row per (date, asset) with columns ``date, asset, open, high, low, close``;
* wide: ``field, date, <asset_1>, ... <asset_N>`` where ``field`` is one of
  ``open, high, low, close`` (prices) or ``return`` (normalized returns, with
  optional ``close`` rows aligned to them).

Any cell missing from the (date x asset) grid is a hard error; the message
lists the number of gaps per asset.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Union

import numpy as np
import pandas as pd

from .errors import DataError
from .panel import OhlcPanel, ReturnPanel

PRICE_FIELDS = ("open", "high", "low", "close")
LONG_COLUMNS = ("date", "asset") + PRICE_FIELDS


def fmt(x) -> str:
    """Full-precision, locale-independent number formatting."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_table(path: Union[str, Path], header: Iterable[str], rows: Iterable[Iterable], comments: Iterable[str] = ()) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_jsonl(path: Union[str, Path], records: Iterable[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, allow_nan=False) + "\n")


def _read(path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, sep=None, engine="python", comment="#", dtype=str, encoding="utf-8")
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    df.columns = [c.strip() for c in df.columns]
    return df


def _gap_report(missing_mask: pd.DataFrame) -> str:
    missing = missing_mask.sum(axis=0)
    missing = missing[missing > 0]
    return ", ".join(f"{asset}: {n} missing" for asset, n in missing.items())


def _to_float(df: pd.DataFrame, what: str) -> pd.DataFrame:
    # astype(float) parses with correct rounding, so repr-written values round-trip exactly;
    # pd.to_numeric does not guarantee this.
    try:
        return df.apply(lambda col: (col.str.strip() if col.dtype == object else col).astype(float))
    except (ValueError, TypeError) as exc:
        raise DataError(f"non-numeric value in {what}: {exc}") from exc


def _parse_dates(values) -> pd.DatetimeIndex:
    try:
        return pd.DatetimeIndex(pd.to_datetime(pd.Series(values).str.strip(), format="ISO8601"))
    except (ValueError, TypeError) as exc:
        raise DataError(f"dates must be ISO-8601: {exc}") from exc


def _grid(df: pd.DataFrame, value: str) -> pd.DataFrame:
    return df.pivot(index="date", columns="asset", values=value).sort_index()


def read_long(df: pd.DataFrame) -> OhlcPanel:
    cols = {c.lower(): c for c in df.columns}
    df = df.rename(columns={cols[c]: c for c in LONG_COLUMNS})[list(LONG_COLUMNS)].copy()
    df["asset"] = df["asset"].str.strip()
    df["date"] = _parse_dates(df["date"]).values
    if df.duplicated(["date", "asset"]).any():
        raise DataError("duplicate (date, asset) rows")
    df[list(PRICE_FIELDS)] = _to_float(df[list(PRICE_FIELDS)], "price columns")
    grids = {f: _grid(df, f) for f in PRICE_FIELDS}
    report = _gap_report(sum(grids[f].isna() for f in PRICE_FIELDS) > 0)
    if report:
        raise DataError(f"panel has gaps: {report}")
    g = grids["close"]
    return OhlcPanel(
        assets=list(g.columns),
        dates=g.index.values,
        **{f: grids[f].to_numpy().T for f in PRICE_FIELDS},
    )


def read_wide(df: pd.DataFrame) -> Union[OhlcPanel, ReturnPanel]:
    df = df.rename(columns={df.columns[0]: "field", df.columns[1]: "date"})
    df["field"] = df["field"].str.strip().str.lower()
    assets = [c for c in df.columns[2:]]
    if not assets:
        raise DataError("wide layout has no asset columns")
    blocks = {}
    for name, block in df.groupby("field", sort=False):
        block = block.drop(columns="field").copy()
        block.index = _parse_dates(block["date"])
        block = _to_float(block.drop(columns="date"), f"field {name!r}").sort_index()
        if block.index.has_duplicates:
            raise DataError(f"duplicate dates in field {name!r}")
        report = _gap_report(block.isna())
        if report:
            raise DataError(f"panel has gaps in field {name!r}: {report}")
        blocks[name] = block
    if "return" in blocks:
        ret = blocks["return"]
        prices = None
        if "close" in blocks:
            close = blocks["close"]
            if not close.index.equals(ret.index):
                raise DataError("close rows must share the dates of the return rows")
            prices = close.to_numpy().T
        return ReturnPanel(assets, ret.index.values, ret.to_numpy().T, prices=prices)
    missing = [f for f in PRICE_FIELDS if f not in blocks]
    if missing:
        raise DataError(f"wide price layout lacks fields {missing}")
    index = blocks["close"].index
    for f in PRICE_FIELDS:
        if not blocks[f].index.equals(index):
            raise DataError(f"field {f!r} has different dates from 'close'")
    return OhlcPanel(assets, index.values, **{f: blocks[f].to_numpy().T for f in PRICE_FIELDS})


def read_panel(path: Union[str, Path]) -> Union[OhlcPanel, ReturnPanel]:
    """Load a panel file, auto-detecting the layout from its header."""
    df = _read(path)
    lower = [c.lower() for c in df.columns]
    if set(LONG_COLUMNS) <= set(lower):
        return read_long(df)
    if len(lower) >= 3 and lower[0] == "field" and lower[1] == "date":
        return read_wide(df)
    raise DataError(
        f"unrecognized header in {path}: expected columns {', '.join(LONG_COLUMNS)} "
        "or a wide layout starting with 'field,date'"
    )


def write_wide(panel: Union[OhlcPanel, ReturnPanel], path: Union[str, Path]) -> None:
    """Serialize a panel in the wide ``field, date, assets...`` layout."""
    if isinstance(panel, ReturnPanel):
        fields = [("return", panel.returns)]
        if panel.prices is not None:
            fields.append(("close", panel.prices))
    else:
        fields = [(f, getattr(panel, f)) for f in PRICE_FIELDS]
    dates = [str(d) for d in panel.dates]
    rows = (
        [name, dates[t], *arr[:, t]]
        for name, arr in fields
        for t in range(len(dates))
    )
    write_table(path, ["field", "date", *panel.assets], rows)


def write_long(panel: OhlcPanel, path: Union[str, Path]) -> None:
    dates = [str(d) for d in panel.dates]
    rows = (
        [dates[t], a, panel.open[i, t], panel.high[i, t], panel.low[i, t], panel.close[i, t]]
        for t in range(len(dates))
        for i, a in enumerate(panel.assets)
    )
    write_table(path, LONG_COLUMNS, rows)
