"""Field snapshot container and CSV exports.

Container layout: a magic line, the header length as little-endian uint64,
a UTF-8 JSON header (grid description, time, component label, units, dtype,
shape, free metadata) and the raw complex payload in C order.
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd

from errors import ConfigError
from grid import CYLINDRICAL, Grid
from units import m_to_um, s_to_ms

logger = logging.getLogger(__name__)

MAGIC = b"SPACE-ATOM-LASER-SNAPSHOT v1\n"
WAVEFUNCTION_UNITS = "m^-3/2"
_DTYPES = {"complex64": np.complex64, "complex128": np.complex128}


@dataclass
class Snapshot:
    field: np.ndarray
    grid: Grid
    time: float
    component: str
    units: str = WAVEFUNCTION_UNITS
    metadata: Dict[str, Any] = field(default_factory=dict)


def write_snapshot(path: Union[str, Path], psi, grid: Grid, time: float, component: str,
                   units: str = WAVEFUNCTION_UNITS, dtype: str = "complex128",
                   metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write one field (grid-shaped, or with leading component axes) to a container file."""
    if dtype not in _DTYPES:
        raise ConfigError(f"Snapshot dtype must be one of {sorted(_DTYPES)}")
    data = np.ascontiguousarray(psi, dtype=_DTYPES[dtype])
    if data.shape[data.ndim - grid.ndim:] != grid.shape:
        raise ConfigError(f"Field shape {data.shape} does not match grid shape {grid.shape}")
    header = {
        "grid": grid.describe(),
        "time_s": float(time),
        "component": component,
        "units": units,
        "dtype": dtype,
        "shape": list(data.shape),
        "byte_order": "little",
        "metadata": metadata or {},
    }
    blob = json.dumps(header).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))
    logger.debug("snapshot %s written (%s, t = %.3f ms)", path, component, s_to_ms(time))
    return path


def read_snapshot(path: Union[str, Path]) -> Snapshot:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC:
            raise ConfigError(f"{path} is not a snapshot container")
        (length,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(length).decode("utf-8"))
        payload = fh.read()
    dtype = np.dtype(_DTYPES[header["dtype"]]).newbyteorder("<")
    data = np.frombuffer(payload, dtype=dtype).reshape(header["shape"]).astype(_DTYPES[header["dtype"]])
    return Snapshot(data, Grid.from_description(header["grid"]), header["time_s"],
                    header["component"], header["units"], header.get("metadata", {}))


def _center_index(grid: Grid, density) -> tuple:
    if np.max(density) > 0:
        return np.unravel_index(int(np.argmax(density)), density.shape)
    return tuple(a.index_of(0.0) for a in grid.axes)


def axis_cuts(psi, grid: Grid, center=None) -> pd.DataFrame:
    """Density |ψ|² along every axis through `center` (default: density maximum)."""
    density = np.abs(psi) ** 2
    center = center if center is not None else _center_index(grid, density)
    frames = []
    for i, a in enumerate(grid.axes):
        index = list(center)
        index[i] = slice(None)
        frames.append(pd.DataFrame({
            "axis": a.name,
            "position_um": m_to_um(a.points),
            "density": density[tuple(index)],
        }))
    return pd.concat(frames, ignore_index=True)


def export_axis_cuts(path: Union[str, Path], psi, grid: Grid, center=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    axis_cuts(psi, grid, center).to_csv(path, index=False)
    return path


def density_slice(values, grid: Grid) -> pd.DataFrame:
    """2D matrix of a grid-shaped real array: (ρ, z) or the y = 0 plane (x, z), μm labels."""
    values = np.asarray(values)
    if grid.mode == CYLINDRICAL or grid.ndim == 2:
        rows, cols = grid.axes
        matrix = values
    elif grid.ndim == 3:
        rows, cols = grid.axes[0], grid.axes[2]
        matrix = values[:, grid.axes[1].index_of(0.0), :]
    else:
        raise ConfigError("density_slice needs a 2D or 3D grid")
    return pd.DataFrame(matrix,
                        index=pd.Index(np.round(m_to_um(rows.points), 6), name=f"{rows.name}_um"),
                        columns=pd.Index(np.round(m_to_um(cols.points), 6), name=f"{cols.name}_um"))


def export_slice(path: Union[str, Path], psi, grid: Grid) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    density_slice(np.abs(psi) ** 2, grid).to_csv(path)
    return path
