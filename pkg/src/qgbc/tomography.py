"""Process tomography in the Pauli basis for single-qubit channels.

A channel E is represented by the 4x4 process matrix chi with
E(rho) = sum_{ab} chi_ab sa rho sb over the Pauli basis {s0..s3}.  The
measured object is the Pauli input table E_ij = Tr[E(sigma_i) sigma_j],
built by linearity from the 18 physical expectation values; flattening both
row-major (k = 4i + j) gives the linear system E~ = A chi~ with

    A[k, l] = Tr[sigma_a sigma_i sigma_b sigma_j],   k = 4i + j, l = 4a + b,

so reconstruction is one solve with the cached inverse.  A has imaginary
entries (Pauli triple products), even though the table and any physical chi
round-trip through it to real data.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .core import PAULI
from .simulator import ExpectationTable, NoiseOperatorSet

# chi matrices and Pauli input tables are plain (4, 4) ndarrays; the
# conventions above fix their meaning.


def pauli_input_table(table: ExpectationTable) -> np.ndarray:
    """Operator-input expectations E_ij from the measured state table.

    Rows use the linear extensions s0 = rho_z+ + rho_z-, s_a = rho_a+ -
    rho_a-; the unmeasured sigma_0 observable column is filled from trace
    preservation (E_00 = 2, E_i0 = 0).
    """
    t = table.values
    e = np.zeros((4, 4))
    e[0, 0] = 2.0
    for j in range(3):
        e[0, 1 + j] = t[4, j] + t[5, j]
        for a in range(3):
            e[1 + a, 1 + j] = t[2 * a, j] - t[2 * a + 1, j]
    return e


@lru_cache(maxsize=1)
def build_a() -> tuple[np.ndarray, np.ndarray]:
    """The 16x16 reconstruction matrix and its inverse.

    Invertibility is checked once at build time; the matrix is a fixed
    property of the Pauli basis.
    """
    a = np.empty((16, 16), dtype=complex)
    for i in range(4):
        for j in range(4):
            for alpha in range(4):
                for beta in range(4):
                    a[4 * i + j, 4 * alpha + beta] = np.trace(
                        PAULI[alpha] @ PAULI[i] @ PAULI[beta] @ PAULI[j]
                    )
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > 1e6:
        raise np.linalg.LinAlgError("reconstruction matrix is ill-conditioned")
    a_inv = np.linalg.inv(a)
    a.flags.writeable = False
    a_inv.flags.writeable = False
    return a, a_inv


def reconstruct_chi(e: np.ndarray) -> np.ndarray:
    """Solve E~ = A chi~ for the process matrix."""
    e = np.asarray(e)
    if e.shape != (4, 4):
        raise ValueError("Pauli input table must be 4x4")
    _, a_inv = build_a()
    return (a_inv @ e.reshape(16).astype(complex)).reshape(4, 4)


def pauli_table_from_chi(chi: np.ndarray) -> np.ndarray:
    """Forward map chi -> E (real part; physical chi gives real E)."""
    a, _ = build_a()
    return (a @ np.asarray(chi, dtype=complex).reshape(16)).reshape(4, 4).real


def chi_from_table(table: ExpectationTable) -> np.ndarray:
    """Reconstructed process matrix of a measured expectation table."""
    return reconstruct_chi(pauli_input_table(table))


def chi_target(gate: np.ndarray) -> np.ndarray:
    """Rank-1 process matrix c c^dag of a target unitary, c_a = Tr[G sa]/2."""
    gate = np.asarray(gate, dtype=complex)
    c = np.array([np.trace(gate @ PAULI[a]) / 2.0 for a in range(4)])
    return np.outer(c, c.conj())


def process_fidelity(actual: np.ndarray, target: np.ndarray) -> float:
    """Tr[chi_actual^dag chi_target]; |Tr[G^dag G']/2|^2 for unitaries."""
    return float(np.real(np.trace(np.asarray(actual).conj().T @ np.asarray(target))))


def vo_distance(ops: NoiseOperatorSet) -> float:
    """Mean Frobenius distance of the noise operators from the identity."""
    eye = np.eye(2)
    return float(np.mean([np.linalg.norm(v - eye) for v in ops.as_list()]))
