"""JSON, CSV and PGM readers and writers used by the command line."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any

import numpy as np

__all__ = [
    "ParseError",
    "load_json",
    "parse_json",
    "write_feature_csv",
    "read_feature_csv",
    "write_gfeature_csv",
    "write_pgm",
    "read_pgm",
    "save_params",
    "load_params",
    "write_matrix_csv",
]


class ParseError(ValueError):
    pass


def parse_json(text: str, source: str = "<string>") -> Any:
    """json.loads with line:col context in the error message."""
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines() or [""]
        line = lines[min(exc.lineno, len(lines)) - 1]
        caret = " " * (exc.colno - 1) + "^"
        raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}\n  {line}\n  {caret}") from None


def load_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    return parse_json(text, str(path))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_feature_csv(path: str | Path, data: np.ndarray, n: int) -> None:
    """Header ``W,n,K``, then one row of K values per cell in row-major order."""
    data = np.asarray(data, dtype=np.float64)
    k, w = data.shape[0], data.shape[-1]
    cells = data.reshape(k, -1).T
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["W", "n", "K"])
        out.writerow([w, n, k])
        for row in cells:
            out.writerow([_fmt(v) for v in row])


def write_gfeature_csv(path: str | Path, data: np.ndarray, n: int) -> None:
    """Header ``W,n,H,K``; rows grouped by stabilizer slice, then by cell."""
    data = np.asarray(data, dtype=np.float64)
    k, order, w = data.shape[0], data.shape[1], data.shape[-1]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["W", "n", "H", "K"])
        out.writerow([w, n, order, k])
        for h in range(order):
            for row in data[:, h].reshape(k, -1).T:
                out.writerow([_fmt(v) for v in row])


def read_feature_csv(path: str | Path) -> tuple[np.ndarray, int]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ParseError(f"{path}: missing header")
    names = rows[0]
    try:
        meta = dict(zip(names, (int(v) for v in rows[1])))
        body = np.array([[float(v) for v in r] for r in rows[2:]])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    w, n, k = meta["W"], meta["n"], meta["K"]
    if "H" in meta:
        order = meta["H"]
        body = body.reshape(order, w**n, k)
        return body.transpose(2, 0, 1).reshape((k, order) + (w,) * n), n
    if body.shape != (w**n, k):
        raise ParseError(f"{path}: expected {w**n} rows of {k} values")
    return body.T.reshape((k,) + (w,) * n), n


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """P2 image: gray for 0, black for +max, white for -max."""
    img = np.atleast_2d(np.asarray(image, dtype=np.float64))
    top = np.abs(img).max()
    scaled = img / top if top > 0 else np.zeros_like(img)
    levels = 127 - np.rint(127 * scaled).astype(int)
    with open(path, "w") as fh:
        fh.write(f"P2\n{img.shape[1]} {img.shape[0]}\n254\n")
        for row in levels:
            fh.write(" ".join(str(v) for v in row) + "\n")


def read_pgm(path: str | Path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines() if not line.startswith("#") for t in line.split()]
    if not tokens or tokens[0] != "P2":
        raise ParseError(f"{path}: not an ASCII PGM")
    w, h, _ = (int(t) for t in tokens[1:4])
    return np.array([int(t) for t in tokens[4 : 4 + w * h]]).reshape(h, w)


def write_matrix_csv(path: str | Path, mat: np.ndarray) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        for row in mat:
            out.writerow([_fmt(v) for v in row])


def save_params(directory: str | Path, params: dict[str, np.ndarray]) -> list[Path]:
    """One CSV per parameter: a shape line, then the row-major values."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for key in sorted(params):
        arr = np.asarray(params[key], dtype=np.float64)
        path = directory / f"{key}.csv"
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["shape"] + list(arr.shape))
            flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
            for row in flat:
                out.writerow([_fmt(v) for v in row])
        written.append(path)
    return written


def load_params(directory: str | Path) -> dict[str, np.ndarray]:
    params = {}
    for path in sorted(Path(directory).glob("*.csv")):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "shape":
            raise ParseError(f"{path}: missing shape line")
        shape = tuple(int(v) for v in rows[0][1:])
        vals = [float(v) for r in rows[1:] for v in r]
        params[path.stem] = np.array(vals).reshape(shape)
    return params
