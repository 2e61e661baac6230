import os
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from pandas.errors import EmptyDataError, ParserError
from scipy.sparse import csr_matrix

from unlabeled_risk.core.classifier import ClassifierParams
from unlabeled_risk.core.data.dataset import Dataset
from unlabeled_risk.core.errors import ConfigError, DataError
from unlabeled_risk.utils.constants import FLOAT_FORMAT

_LABEL_VALUES = {1.0: 1, -1.0: -1}
UNLABELED_MARK = "?"


def load_dense_csv(
    path,
    has_labels: bool,
    label_column: int = -1,
    dim: Optional[int] = None,
    header: bool = False,
    multiclass: bool = False,
) -> Dataset:
    """
    Load a rectangular numeric CSV table.

    Parameters
    ----------
    path : str or path-like
        UTF-8 file, LF or CRLF line endings, comma separated.
    has_labels : bool
        Whether one column holds labels in {-1, +1}.
    label_column : int
        Index of the label column (negative indices count from the end).
    dim : int, optional
        Declared feature dimension; the column count must then equal
        ``dim`` plus one when labels are present.
    header : bool
        Skip the first line.
    multiclass : bool
        Accept class ids 1..K in the label column instead of -1/+1.
    """
    table = _read_table(path, header)
    rows, columns = table.shape
    row_offset = 2 if header else 1

    incomplete = table.isna().any(axis=1).to_numpy()
    if np.any(incomplete):
        row = int(np.flatnonzero(incomplete)[0]) + row_offset
        raise DataError(f"{path}: row {row} has fewer than {columns} fields.")

    expected = None if dim is None else dim + (1 if has_labels else 0)
    if expected is not None and columns != expected:
        raise DataError(
            f"{path}: found {columns} columns, declared {expected} "
            f"(dim={dim}{', plus labels' if has_labels else ''})."
        )

    values = table.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
    bad = values.isna().to_numpy()
    if np.any(bad):
        row, column = np.argwhere(bad)[0]
        raise DataError(
            f"{path}: row {row + row_offset}, column {column + 1} is not numeric "
            f"({table.iat[row, column]!r})."
        )
    matrix = values.to_numpy(dtype=float)

    if not has_labels:
        return Dataset(matrix, None, provenance=str(path))

    if not -columns <= label_column < columns:
        raise ConfigError(f"Label column {label_column} is out of range for {columns} columns.")
    label_column %= columns
    labels = np.empty(rows, dtype=int)
    for row, value in enumerate(matrix[:, label_column]):
        if multiclass and value >= 1 and value == int(value):
            labels[row] = int(value)
        elif not multiclass and value in _LABEL_VALUES:
            labels[row] = _LABEL_VALUES[value]
        else:
            raise DataError(f"{path}: row {row + row_offset} has unknown label {value!r}.")
    features = np.delete(matrix, label_column, axis=1)
    if features.shape[1] == 0:
        raise DataError(f"{path}: no feature columns besides the labels.")
    return Dataset(features, labels, provenance=str(path))


def load_sparse(path, d_declared: int) -> Dataset:
    """
    Load ``label idx:val idx:val ...`` lines into a dense dataset.

    Indices are 1-based and strictly increasing; absent indices are 0. The
    label is -1/+1, or ``?`` for an unlabeled line. Blank lines are skipped.
    """
    if d_declared < 1:
        raise ConfigError("The declared dimension must be >= 1.")
    if not os.path.isfile(path):
        raise DataError(f"{path}: no such file.")

    try:
        indptr, indices, data, labels = _parse_sparse_lines(path, d_declared)
    except UnicodeDecodeError as exc:
        raise _decode_error(path, exc) from None

    if not labels:
        raise DataError(f"{path}: no samples.")
    labeled = [label is not None for label in labels]
    if any(labeled) and not all(labeled):
        raise DataError(f"{path}: mixes labeled and unlabeled ('?') lines.")

    matrix = csr_matrix((data, indices, indptr), shape=(len(labels), d_declared), dtype=float)
    return Dataset(matrix.toarray(), labels if labeled[0] else None, provenance=str(path))


def _parse_sparse_lines(path, d_declared: int):
    indptr, indices, data, labels = [0], [], [], []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            labels.append(_parse_sparse_label(tokens[0], path, line_number))
            previous = 0
            for token in tokens[1:]:
                index, value = _parse_sparse_entry(token, path, line_number)
                if index <= previous:
                    raise DataError(
                        f"{path}: line {line_number}: indices must be strictly increasing."
                    )
                if index > d_declared:
                    raise DataError(
                        f"{path}: line {line_number}: index {index} exceeds dimension {d_declared}."
                    )
                previous = index
                indices.append(index - 1)
                data.append(value)
            indptr.append(len(indices))
    return indptr, indices, data, labels


def save_dense_csv(dataset: Dataset, path, header: bool = False) -> None:
    """
    Write features (and labels as the last column) at full precision.
    """
    table = pd.DataFrame(dataset.features, columns=[f"x{j + 1}" for j in range(dataset.d)])
    if dataset.labeled:
        table["label"] = dataset.labels
    table.to_csv(path, index=False, header=header, float_format=FLOAT_FORMAT)


def save_sparse(dataset: Dataset, path) -> None:
    labels = dataset.labels if dataset.labeled else [None] * dataset.n
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row, label in zip(dataset.features, labels):
            head = UNLABELED_MARK if label is None else f"{int(label):+d}"
            entries = [f"{j + 1}:{FLOAT_FORMAT % v}" for j, v in enumerate(row) if v != 0]
            f.write(" ".join([head, *entries]) + "\n")


def _read_table(path, header: bool) -> pd.DataFrame:
    if not os.path.isfile(path):
        raise DataError(f"{path}: no such file.")
    try:
        table = pd.read_csv(
            path,
            header=None,
            skiprows=1 if header else 0,
            dtype=str,
            keep_default_na=False,
            na_values=[],
            skip_blank_lines=True,
            encoding="utf-8",
        )
    except EmptyDataError:
        raise DataError(f"{path}: file is empty.") from None
    except ParserError as exc:
        raise DataError(f"{path}: ragged rows ({exc}).") from None
    except UnicodeDecodeError as exc:
        raise _decode_error(path, exc) from None
    if table.empty:
        raise DataError(f"{path}: file is empty.")
    return table


def _decode_error(path, exc: UnicodeDecodeError) -> DataError:
    """
    DataError locating the first invalid UTF-8 byte of the whole file.
    """
    with open(path, "rb") as f:
        raw = f.read()
    try:
        raw.decode("utf-8")
        offset = exc.start
    except UnicodeDecodeError as full:
        offset = full.start
    line = raw[:offset].count(b"\n") + 1
    return DataError(f"{path}: invalid UTF-8 at byte offset {offset} (line {line}).")


def _parse_sparse_label(token: str, path, line_number: int):
    if token == UNLABELED_MARK:
        return None
    try:
        value = float(token)
    except ValueError:
        value = None
    if value not in _LABEL_VALUES:
        raise DataError(f"{path}: line {line_number}: unknown label {token!r}.")
    return _LABEL_VALUES[value]


def _parse_sparse_entry(token: str, path, line_number: int):
    try:
        index, value = token.split(":")
        return int(index), float(value)
    except ValueError:
        raise DataError(f"{path}: line {line_number}: malformed entry {token!r}.") from None


def load_theta(path) -> List[ClassifierParams]:
    """
    Read classifier weights, one classifier per CSV row. A single-column
    file holds one weight vector.
    """
    table = _read_table(path, header=False)
    values = table.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
    if values.isna().to_numpy().any():
        raise DataError(f"{path}: classifier weights must be numeric.")
    matrix = values.to_numpy(dtype=float)
    if matrix.shape[1] == 1:
        return [ClassifierParams(matrix[:, 0])]
    return [ClassifierParams(row) for row in matrix]


def save_theta(params: Sequence[ClassifierParams], path) -> None:
    table = pd.DataFrame([p.weights for p in params])
    table.to_csv(path, index=False, header=False, float_format=FLOAT_FORMAT, lineterminator="\n")
