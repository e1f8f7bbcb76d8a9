"""File formats: model config documents and the CSV artifacts.

Every writer goes through :func:`atomic_write_text` (temporary file in the
target directory, then ``os.replace``) and formats floats with ``repr`` so
reruns with the same seed produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .models import BuildingPhi, LinearRecurrenceSpec
from .var_process import VarModel

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if value == 0.0:
        return "0"  # folds -0.0 as well
    return repr(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def read_document(path) -> dict:
    """Parse a JSON or TOML config document."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def load_var_model(path) -> VarModel:
    doc = read_document(path)
    # a fit report nests the model next to its metadata
    return VarModel.from_dict(doc.get("model", doc))


def save_document(path, doc: dict) -> Path:
    return atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=False) + "\n")


def save_var_model(path, model: VarModel, metadata: dict | None = None) -> Path:
    doc = model.to_dict()
    if metadata is not None:
        doc = {**doc, "metadata": metadata}
    return save_document(path, doc)


def load_linear_spec(path) -> LinearRecurrenceSpec:
    return LinearRecurrenceSpec.from_dict(read_document(path))


def load_building_phi(path) -> BuildingPhi:
    return BuildingPhi.from_dict(read_document(path))


def write_trajectories(path, data: np.ndarray) -> Path:
    """``sample,t,u1..up``, one row per (sample, t)."""
    data = np.asarray(data)
    n, steps, p = data.shape
    header = ["sample", "t"] + [f"u{j + 1}" for j in range(p)]
    rows = ((i, t, *data[i, t]) for i in range(n) for t in range(steps))
    return atomic_write_text(path, csv_text(header, rows))


def read_trajectories(path) -> np.ndarray:
    import pandas as pd

    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns[:2]) != ["sample", "t"]:
        raise ConfigError(f"{path}: expected header starting with sample,t")
    n, steps = frame["sample"].max() + 1, frame["t"].max() + 1
    values = frame.iloc[:, 2:].to_numpy(dtype=float)
    return values.reshape(n, steps, values.shape[1])


def write_pair(path, pair) -> Path:
    """Pick-freeze pair in trajectory format with a leading ``replica`` column."""
    first = pair.inputs(1)
    n, steps, p = first.shape
    header = ["replica", "sample", "t"] + [f"u{j + 1}" for j in range(p)]
    rows = []
    for r, data in ((1, first), (2, pair.inputs(2))):
        rows.extend((r, i, t, *data[i, t]) for i in range(n) for t in range(steps))
    return atomic_write_text(path, csv_text(header, rows))


def lambda_rows(lam: np.ndarray) -> list[tuple]:
    """Rows ``s, z1..`` of the block of ``Lambda_t`` that predicts ``Z_t``.

    ``lam`` is ``plan.lambda_for(t)`` of shape (t+1, t+1, p-1).
    """
    t = lam.shape[0] - 1
    return [(s, *lam[s, t]) for s in range(t + 1)]


def write_lambda(directory, plan, times: Iterable[int], z_names: Sequence[str] | None = None) -> list[Path]:
    paths = []
    for t in times:
        lam = plan.lambda_for(t)
        names = list(z_names) if z_names else [f"z{j + 1}" for j in range(lam.shape[2])]
        paths.append(atomic_write_text(Path(directory) / f"lambda_t{t}.csv", csv_text(["s", *names], lambda_rows(lam))))
    return paths


SERIES_HEADER = ["coord", "t", "estimate", "ci_lo", "ci_hi", "n", "plateau"]


def write_series(path, series_list, metadata: dict | None = None) -> Path:
    """All series in one CSV plus a ``.json`` sidecar with plateau times and settings."""
    from .pick_freeze import rows

    body = []
    for series in series_list:
        body.extend(rows(series))
    path = atomic_write_text(path, csv_text(SERIES_HEADER, body))
    side = {
        "plateau": {str(s.target + 1): s.plateau_time for s in series_list},
        "ci_method": series_list[0].ci_method if series_list else None,
        "level": series_list[0].level if series_list else None,
        **(metadata or {}),
    }
    save_document(path.with_suffix(".json"), side)
    return path


def read_series(path):
    import pandas as pd

    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != SERIES_HEADER:
        raise ConfigError(f"{path}: unexpected header {list(frame.columns)}")
    return frame


def gnuplot_script(csv_path, coords: Sequence[int], title: str = "") -> str:
    """Script plotting each coordinate's estimate with its interval band."""
    name = Path(csv_path).name
    plots = []
    for c in coords:
        sel = f"($1=={c}?$2:1/0)"
        plots.append(f"'{name}' using {sel}:4:5 with filledcurves fs transparent solid 0.2 notitle")
        plots.append(f"'{name}' using {sel}:3 with linespoints title 'coord {c}'")
    return (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        f"set title '{title}'\n"
        "set xlabel 't'\nset ylabel 'index'\nset yrange [-0.1:1.1]\n"
        "plot " + ", \\\n     ".join(plots) + "\n"
    )


def write_gnuplot(csv_path, coords: Sequence[int], title: str = "") -> Path:
    return atomic_write_text(Path(csv_path).with_suffix(".gp"), gnuplot_script(csv_path, coords, title))
