"""Dense linear-algebra core: regularized covariance accumulators and helpers."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

DEFAULT_REFRESH = 512


class CovarianceAccumulator:
    """Running ``Sigma = lam * I + sum_i w_i phi_i phi_i^T`` with its inverse.

    The inverse is maintained with rank-one (Sherman-Morrison) updates and the
    log-determinant with the matrix determinant lemma. Every ``refresh_every``
    updates the inverse is checked against the matrix and re-factorized if it
    drifted. ``target`` accumulates ``sum_i w_i y_i phi_i`` so that
    :meth:`solve` returns the weighted ridge solution.
    """

    def __init__(self, dim: int, lam: float, refresh_every: int = DEFAULT_REFRESH):
        if not lam > 0 or not math.isfinite(lam):
            raise ValueError(f"regularizer must be positive and finite, got {lam}")
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)
        self.lam = float(lam)
        self.refresh_every = int(refresh_every)
        self.matrix = lam * np.eye(dim)
        self.inverse = np.eye(dim) / lam
        self.log_det = dim * math.log(lam)
        self.target = np.zeros(dim)
        self.count = 0
        self._since_check = 0

    def copy(self) -> CovarianceAccumulator:
        out = CovarianceAccumulator.__new__(CovarianceAccumulator)
        out.dim, out.lam, out.refresh_every = self.dim, self.lam, self.refresh_every
        out.matrix = self.matrix.copy()
        out.inverse = self.inverse.copy()
        out.log_det = self.log_det
        out.target = self.target.copy()
        out.count = self.count
        out._since_check = self._since_check
        return out

    def _check_vec(self, phi) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dim,):
            raise ValueError(f"expected feature of shape ({self.dim},), got {phi.shape}")
        return phi

    def update(self, phi, weight: float = 1.0, target_value: float = 0.0) -> None:
        phi = self._check_vec(phi)
        if not (np.all(np.isfinite(phi)) and math.isfinite(weight) and math.isfinite(target_value)):
            raise ValueError("non-finite input to covariance update")
        if weight < 0:
            raise ValueError(f"weight must be nonnegative, got {weight}")
        if weight == 0.0:
            return
        u = self.inverse @ phi
        quad = float(phi @ u)
        denom = 1.0 + weight * quad
        self.log_det += math.log1p(weight * quad)
        self.inverse -= (weight / denom) * np.outer(u, u)
        self.matrix += weight * np.outer(phi, phi)
        self.target += (weight * target_value) * phi
        self.count += 1
        self._since_check += 1
        if self._since_check >= self.refresh_every:
            self.check_drift()

    def check_drift(self, tol: float = 1e-7) -> bool:
        """Re-factorize if the maintained inverse or log-det drifted; return True if it did."""
        self._since_check = 0
        resid = np.max(np.abs(self.matrix @ self.inverse - np.eye(self.dim)))
        sign, logdet = np.linalg.slogdet(self.matrix)
        drifted = resid > tol or abs(logdet - self.log_det) > 1e-6 * max(1.0, abs(logdet))
        if drifted:
            self.refactor()
        return drifted

    def refactor(self) -> None:
        self.matrix = 0.5 * (self.matrix + self.matrix.T)
        self.inverse = np.linalg.inv(self.matrix)
        self.inverse = 0.5 * (self.inverse + self.inverse.T)
        self.log_det = float(np.linalg.slogdet(self.matrix)[1])

    def add_matrix(self, gram: np.ndarray) -> None:
        """Add a PSD block ``gram`` (e.g. a precomputed sum of outer products)."""
        self.matrix = self.matrix + gram
        self.refactor()

    def bonus(self, phi) -> float:
        phi = self._check_vec(phi)
        return math.sqrt(max(float(phi @ self.inverse @ phi), 0.0))

    def bonuses(self, feats: np.ndarray) -> np.ndarray:
        """Elliptic norms for every row of ``feats`` (shape ``(..., dim)``)."""
        quad = np.einsum("...i,ij,...j->...", feats, self.inverse, feats)
        return np.sqrt(np.maximum(quad, 0.0))

    def solve(self, target: np.ndarray | None = None) -> np.ndarray:
        b = self.target if target is None else target
        return self.inverse @ b

    def save(self, path) -> None:
        """Write ``lam count dim`` then the matrix rows then ``target`` as plain text."""
        rows = [f"{self.lam!r} {self.count} {self.dim}"]
        rows += [" ".join(repr(float(x)) for x in row) for row in self.matrix]
        rows.append(" ".join(repr(float(x)) for x in self.target))
        Path(path).write_text("\n".join(rows) + "\n")

    @classmethod
    def load(cls, path) -> CovarianceAccumulator:
        lines = Path(path).read_text().splitlines()
        lam_s, count_s, dim_s = lines[0].split()
        dim = int(dim_s)
        acc = cls(dim, float(lam_s))
        acc.matrix = read_matrix_lines(lines[1 : 1 + dim])
        acc.target = np.array([float(x) for x in lines[1 + dim].split()])
        acc.count = int(count_s)
        acc.refactor()
        return acc


def ridge_solve(acc: CovarianceAccumulator) -> np.ndarray:
    return acc.solve()


def eig_topk(matrix, k: int, sym_tol: float = 1e-8):
    """Top-``k`` eigenpairs of a symmetric matrix, eigenvalues descending."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T)) > sym_tol * scale:
        raise ValueError("matrix is not symmetric")
    if not 1 <= k <= m.shape[0]:
        raise ValueError(f"k must lie in [1, {m.shape[0]}], got {k}")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(vals, kind="stable")[::-1][:k]
    return vals[order], vecs[:, order]


def clamp(x, lo, hi):
    if lo > hi:
        raise ValueError(f"empty clamp range [{lo}, {hi}]")
    return np.minimum(np.maximum(x, lo), hi) if isinstance(x, np.ndarray) else min(max(x, lo), hi)


def write_matrix(path, matrix: np.ndarray) -> None:
    """Plain-text matrix: one row per line, space separated."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    Path(path).write_text("".join(" ".join(repr(float(x)) for x in row) + "\n" for row in matrix))


def read_matrix_lines(lines) -> np.ndarray:
    rows = [[float(x) for x in line.split()] for line in lines if line.strip()]
    if len({len(r) for r in rows}) > 1:
        raise ValueError("ragged matrix rows")
    return np.array(rows, dtype=float)


def read_matrix(path) -> np.ndarray:
    return read_matrix_lines(Path(path).read_text().splitlines())
