"""CSV tables ``t,<prefix>0,<prefix>1,...`` at 17 significant digits."""
import numpy as np

from .errors import DataError


def write_table(file, times, values, prefix):
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64).reshape(len(times), -1)
    header = ",".join(["t"] + [f"{prefix}{i}" for i in range(values.shape[1])])
    data = np.column_stack([times, values])
    np.savetxt(file, data, delimiter=",", header=header, comments="", fmt="%.17g")


def read_table(file, prefix):
    """Return ``(times, values)``; validates the header against ``prefix``."""
    if hasattr(file, "read"):
        text = file.read()
    else:
        with open(file) as fh:
            text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{file}: empty table")
    cols = lines[0].strip().split(",")
    expected = ["t"] + [f"{prefix}{i}" for i in range(len(cols) - 1)]
    if cols != expected:
        raise DataError(f"{file}: header {cols} does not match {expected[:3]}...")
    rows = [np.array(line.split(","), dtype=np.float64) for line in lines[1:] if line.strip()]
    data = np.array(rows).reshape(len(rows), len(cols))
    times = data[:, 0].copy()
    if len(times) > 1 and np.any(np.diff(times) <= 0):
        raise DataError(f"{file}: times must be strictly increasing")
    return times, data[:, 1:].copy()
