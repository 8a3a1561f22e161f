"""
Symmetric 3x3 eigendecomposition with a reproducible ordering and sign.
"""

from dataclasses import dataclass
from numpy.typing import ArrayLike, NDArray

import numpy as np

@dataclass(frozen=True)
class SymEig3:
    """Eigenvalues sorted in descending order, with their eigenvectors as the matching columns."""
    eigenvalues: NDArray[np.float64]
    eigenvectors: NDArray[np.float64]

    def reconstruct(self) -> NDArray[np.float64]:
        return self.eigenvectors @ np.diag(self.eigenvalues) @ self.eigenvectors.T

def sym_eig3(m: ArrayLike) -> SymEig3:
    """Eigendecomposition of a symmetric 3x3 matrix. The input is symmetrized first."""
    m = np.asarray(m, dtype=np.float64)
    if not m.shape == (3, 3):
        raise ValueError(f"sym_eig3 expects a 3x3 matrix, not {m.shape}.")
    m = 0.5 * (m + m.T)

    eigenvalues, eigenvectors = np.linalg.eigh(m)
    order = np.argsort(eigenvalues, kind="stable")[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]

    # first nonzero component of every eigenvector is positive
    for column in range(3):
        vector = eigenvectors[:, column]
        leading = vector[np.flatnonzero(np.abs(vector) > 1e-12)[0]]
        if leading < 0.0:
            eigenvectors[:, column] = -vector

    return SymEig3(eigenvalues, eigenvectors)
