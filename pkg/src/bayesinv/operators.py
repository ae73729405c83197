"""Linear forward operators with matrix-free apply/adjoint.

The forward map takes a length-n parameter vector to a length-m
observation vector. Every operator also exposes its adjoint (equal to
the matrix transpose in the dense picture) and a dense materialization
used by oracles and Gram assembly. All arithmetic is float64.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, ParameterError


def _as_vector(x, length, what):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError(f"{what} must be a 1-D vector, got shape {x.shape}")
    if x.shape[0] != length:
        raise DimensionMismatchError.expected(what, length, x.shape[0])
    return x


class LinearOperator:
    """Base class: a linear map R^cols -> R^rows with an adjoint."""

    kind = "abstract"
    rows: int
    cols: int

    def apply(self, f):
        raise NotImplementedError

    def apply_adjoint(self, g):
        raise NotImplementedError

    def _materialize(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(rows={self.rows}, cols={self.cols})"


class DenseOperator(LinearOperator):
    """Explicit m-by-n matrix."""

    kind = "dense"

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ParameterError(f"dense operator needs a 2-D matrix, got shape {matrix.shape}")
        matrix.flags.writeable = False
        self.matrix = matrix
        self.rows, self.cols = matrix.shape

    def apply(self, f):
        f = _as_vector(f, self.cols, "input")
        return self.matrix @ f

    def apply_adjoint(self, g):
        g = _as_vector(g, self.rows, "adjoint input")
        return self.matrix.T @ g

    def _materialize(self):
        return self.matrix.copy()


class IdentityOperator(LinearOperator):
    kind = "identity"

    def __init__(self, n):
        if n < 1:
            raise ParameterError(f"identity size must be >= 1, got {n}")
        self.rows = self.cols = int(n)

    def apply(self, f):
        return _as_vector(f, self.cols, "input").copy()

    def apply_adjoint(self, g):
        return _as_vector(g, self.rows, "adjoint input").copy()

    def _materialize(self):
        return np.eye(self.cols)


class Convolution1D(LinearOperator):
    """Zero-padded "same" convolution: square map, kernel centered at len//2."""

    kind = "convolution"

    def __init__(self, kernel, n):
        kernel = np.array(kernel, dtype=float)
        if kernel.ndim != 1 or kernel.size == 0:
            raise ParameterError("kernel must be a nonempty 1-D vector")
        if n < 1:
            raise ParameterError(f"input length must be >= 1, got {n}")
        kernel.flags.writeable = False
        self.kernel = kernel
        self.rows = self.cols = int(n)
        self._center = kernel.size // 2

    def apply(self, f):
        f = _as_vector(f, self.cols, "input")
        full = np.convolve(f, self.kernel)
        return full[self._center : self._center + self.rows]

    def apply_adjoint(self, g):
        # Transpose of the banded "same" matrix = correlation with the kernel,
        # i.e. convolution with the reversed kernel at the mirrored offset.
        g = _as_vector(g, self.rows, "adjoint input")
        full = np.convolve(g, self.kernel[::-1])
        start = self.kernel.size - 1 - self._center
        return full[start : start + self.cols]

    def _materialize(self):
        n, k, c = self.cols, self.kernel.size, self._center
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                t = i + c - j
                if 0 <= t < k:
                    out[i, j] = self.kernel[t]
        return out


class MaskOperator(LinearOperator):
    """Row selection: keeps the listed components of the input."""

    kind = "mask"

    def __init__(self, keep, n):
        if n < 1:
            raise ParameterError(f"input length must be >= 1, got {n}")
        keep = np.array(sorted(set(int(i) for i in keep)), dtype=int)
        if keep.size == 0:
            raise ParameterError("mask must keep at least one index")
        if keep[0] < 0 or keep[-1] >= n:
            raise ParameterError(f"kept indices must lie in [0, {n}), got {keep.tolist()}")
        keep.flags.writeable = False
        self.keep = keep
        self.rows = keep.size
        self.cols = int(n)

    def apply(self, f):
        f = _as_vector(f, self.cols, "input")
        return f[self.keep]

    def apply_adjoint(self, g):
        g = _as_vector(g, self.rows, "adjoint input")
        out = np.zeros(self.cols)
        out[self.keep] = g
        return out

    def _materialize(self):
        out = np.zeros((self.rows, self.cols))
        out[np.arange(self.rows), self.keep] = 1.0
        return out


class DiffOperator(LinearOperator):
    """First-order non-circular difference: (n-1)-by-n rows (..., -1, +1, ...)."""

    kind = "first_difference"

    def __init__(self, n):
        if n < 2:
            raise ParameterError(f"difference operator needs n >= 2, got {n}")
        self.rows = int(n) - 1
        self.cols = int(n)

    def apply(self, f):
        f = _as_vector(f, self.cols, "input")
        return np.diff(f)

    def apply_adjoint(self, g):
        g = _as_vector(g, self.rows, "adjoint input")
        out = np.zeros(self.cols)
        out[1:] += g
        out[:-1] -= g
        return out

    def _materialize(self):
        out = np.zeros((self.rows, self.cols))
        idx = np.arange(self.rows)
        out[idx, idx] = -1.0
        out[idx, idx + 1] = 1.0
        return out


def first_difference(n) -> DiffOperator:
    """The (n-1)-by-n first-difference operator; kills constant vectors."""
    return DiffOperator(n)


def apply(op: LinearOperator, f):
    """Forward map: H f."""
    return op.apply(f)


def apply_adjoint(op: LinearOperator, g):
    """Adjoint map: H' g, satisfying <Hx, y> = <x, H'y>."""
    return op.apply_adjoint(g)


def materialize(op: LinearOperator) -> np.ndarray:
    """Dense matrix of the operator; column j equals apply(e_j)."""
    return op._materialize()


def gram_regularized(op: LinearOperator, lam: float) -> np.ndarray:
    """H'H + lambda*I, symmetrized; positive definite for lambda > 0."""
    if lam < 0:
        raise ParameterError(f"regularization must be >= 0, got {lam}")
    mat = materialize(op)
    gram = mat.T @ mat
    gram = 0.5 * (gram + gram.T)
    gram[np.diag_indices_from(gram)] += lam
    return gram
