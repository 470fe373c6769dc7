# cython: boundscheck=False, wraparound=False, cdivision=True
"""Row-wise scatter-add, the hot kernel of graph message aggregation.

Both the forward segment sum (messages -> receiving nodes) and the
backward pass of row gathers (output grads -> table rows) reduce to
``out[idx[e], :] += rows[e, :]`` over many small row blocks, which is
exactly the pattern ``np.add.at`` handles slowly.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(double[:, ::1] out, const cnp.int64_t[::1] idx,
                     const double[:, ::1] rows):
    """Accumulate rows[e] into out[idx[e]] for every e, in index order."""
    cdef Py_ssize_t e, j, r
    cdef Py_ssize_t n_rows = idx.shape[0]
    cdef Py_ssize_t dim = out.shape[1]
    if rows.shape[0] != n_rows:
        raise ValueError(
            f"index count {n_rows} != row count {rows.shape[0]}")
    if rows.shape[1] != dim:
        raise ValueError(
            f"row width {rows.shape[1]} != output width {dim}")
    with nogil:
        for e in range(n_rows):
            r = idx[e]
            for j in range(dim):
                out[r, j] += rows[e, j]
