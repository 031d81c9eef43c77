"""Deterministic report serialization.

Every float is printed with 17 significant digits so reports round-trip
losslessly and identical runs produce byte-identical files.
"""

from __future__ import annotations

import numpy as np


def fmt_float(x) -> str:
    x = float(x)
    if x != x:
        return "nan"
    if x in (float("inf"), float("-inf")):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def _canon(obj):
    if isinstance(obj, dict):
        items = ((str(k), _canon(v)) for k, v in obj.items())
        return "{" + ",".join(f"{_quote(k)}:{v}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canon(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _quote(fmt_float(obj)) if not np.isfinite(obj) else fmt_float(obj)
    if isinstance(obj, np.ndarray):
        return _canon(obj.tolist())
    return _quote(str(obj))


def _quote(s: str) -> str:
    out = s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
    return f'"{out}"'


def to_json(obj) -> str:
    return _canon(obj)


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(to_json(obj))
        fh.write("\n")


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, (float, np.floating)):
                    cells.append(fmt_float(v))
                elif isinstance(v, (bool, np.bool_)):
                    cells.append("true" if v else "false")
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")
