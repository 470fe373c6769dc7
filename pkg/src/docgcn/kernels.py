"""Backend selection for the scatter-add hot kernel.

The compiled Cython extension is preferred; a pure-numpy fallback keeps
the package importable from an unbuilt source tree. Set DOCGCN_PURE_PYTHON=1
to force the fallback (used by the benchmark and the equivalence tests).
"""

from __future__ import annotations

import os

import numpy as np


def _scatter_add_rows_numpy(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> None:
    if rows.shape[0] != idx.shape[0] or rows.shape[1] != out.shape[1]:
        raise ValueError(
            f"scatter shapes disagree: out {out.shape}, idx {idx.shape}, rows {rows.shape}"
        )
    np.add.at(out, idx, rows)


try:
    from ._scatter import scatter_add_rows as _scatter_add_rows_compiled
except ImportError:  # running from source without a built extension
    _scatter_add_rows_compiled = None

if _scatter_add_rows_compiled is None or os.environ.get("DOCGCN_PURE_PYTHON"):
    BACKEND = "numpy"
    _scatter_impl = _scatter_add_rows_numpy
else:
    BACKEND = "compiled"
    _scatter_impl = _scatter_add_rows_compiled


def scatter_add_rows(out: np.ndarray, idx: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """out[idx[e]] += rows[e] for every e; returns out (modified in place)."""
    _scatter_impl(out, idx, rows)
    return out


def backend_name() -> str:
    return BACKEND
