"""
CSV ingestion and export of subject/unit/subunit/response records
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.errors import ConfigError, IngestError
from app.core.output import write_table
from app.models.dataset import Dataset, Subject
from app.models.run import InputRecord

logger = logging.getLogger(__name__)

COLUMNS = ["subject", "unit_location", "subunit", "response"]


def _rows(mask) -> List[int]:
    """1-based file line numbers (the header is line 1)"""
    return [int(i) + 2 for i in np.flatnonzero(np.asarray(mask))]


def dataset_from_frame(frame: pd.DataFrame, domain_length: Optional[float] = None) -> Dataset:
    """Validate raw records (all columns as text) and build a Dataset"""
    frame = frame.reset_index(drop=True)
    numeric = frame[["unit_location", "subunit", "response"]].apply(pd.to_numeric, errors="coerce")
    bad = ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1) | frame["subject"].isna().to_numpy()
    if bad.any():
        raise IngestError("non-finite", "missing or non-finite values", _rows(bad))

    records = pd.DataFrame({
        "subject": frame["subject"].astype(str).str.strip(),
        "location_text": frame["unit_location"].astype(str).str.strip(),
        "unit_location": numeric["unit_location"],
        "subunit": numeric["subunit"],
        "response": numeric["response"],
    })
    out_of_range = (records["subunit"] < 0) | (records["subunit"] > 1) | (records["unit_location"] < 0)
    if out_of_range.any():
        raise IngestError("out-of-range", "subunits must lie in [0, 1] and locations be >= 0", _rows(out_of_range))

    spellings = records.groupby(["subject", "unit_location"])["location_text"].transform("nunique")
    if (spellings > 1).any():
        raise IngestError(
            "duplicate-location", "distinct unit labels share one location", _rows(spellings > 1)
        )

    duplicated = records.duplicated(["subject", "unit_location", "subunit"], keep=False)
    if duplicated.any():
        raise IngestError("duplicate-row", "repeated (subject, unit, subunit) rows", _rows(duplicated))

    grid = np.sort(records["subunit"].unique())
    per_unit = records.groupby(["subject", "unit_location"])["subunit"].transform("size")
    ragged = per_unit != grid.size
    if ragged.any():
        first = records[ragged].iloc[0]
        raise IngestError(
            "ragged-grid",
            f"unit at {first['unit_location']:g} of subject {first['subject']} lacks subunits "
            f"of the common {grid.size}-point grid",
            _rows(ragged),
        )

    max_location = float(records["unit_location"].max())
    length = domain_length if domain_length is not None else max_location
    if length <= 0:
        raise ConfigError("domain length must be positive; pass it explicitly")
    if max_location > length:
        raise ConfigError(f"unit location {max_location:g} exceeds the domain length {length:g}")

    subjects = []
    for subject_id, rows in records.groupby("subject", sort=True):
        wide = rows.pivot(index="unit_location", columns="subunit", values="response")
        wide = wide.reindex(columns=grid)
        subjects.append(Subject(
            id=str(subject_id),
            unit_locations=wide.index.to_numpy(dtype=float),
            responses=wide.to_numpy(dtype=float),
        ))
    data = Dataset(subjects=subjects, subunit_grid=grid, domain_length=length)
    logger.info(
        f"ingested {data.n_subjects} subjects, {data.total_units} units, m={data.m}, L={length:g}"
    )
    return data


def ingest(path: Union[str, Path], domain_length: Optional[float] = None) -> Dataset:
    """Read a `subject,unit_location,subunit,response` CSV"""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""], encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise IngestError("bad-header", f"{path} is empty")
    if list(frame.columns) != COLUMNS:
        raise IngestError("bad-header", f"expected header {','.join(COLUMNS)}, got {','.join(map(str, frame.columns))}")
    if frame.empty:
        raise IngestError("empty-subject", f"{path} holds no records")
    return dataset_from_frame(frame, domain_length)


def dataset_from_records(records: Sequence[InputRecord], domain_length: Optional[float] = None) -> Dataset:
    if not records:
        raise IngestError("empty-subject", "no records supplied")
    frame = pd.DataFrame({
        "subject": [r.subject_id for r in records],
        "unit_location": [repr(r.unit_location) for r in records],
        "subunit": [repr(r.subunit) for r in records],
        "response": [repr(r.response) for r in records],
    })
    return dataset_from_frame(frame, domain_length)


def to_frame(data: Dataset) -> pd.DataFrame:
    rows = []
    for index, subject in enumerate(data.subjects):
        responses = data.responses_of(index)
        for i, location in enumerate(subject.unit_locations):
            for j, x in enumerate(data.subunit_grid):
                rows.append((subject.id, float(location), float(x), float(responses[i, j])))
    return pd.DataFrame(rows, columns=COLUMNS)


def export(data: Dataset, path: Union[str, Path]) -> Path:
    """Write a Dataset back to the ingest CSV layout"""
    return write_table(to_frame(data), path, sep=",")
