"""Pauli matrices, two-level ladder operators and named target gates."""
from __future__ import annotations

import numpy as np

from .core import ValidationError, embed, expm_hermitian, tensor

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"x": SX, "y": SY, "z": SZ}

# two-level truncation: a|1> = |0>
LOWER = np.array([[0, 1], [0, 0]], dtype=complex)
RAISE = LOWER.conj().T
NUMBER = RAISE @ LOWER


def rx(angle: float) -> np.ndarray:
    return expm_hermitian(SX / 2, angle)


def ry(angle: float) -> np.ndarray:
    return expm_hermitian(SY / 2, angle)


def rz(angle: float) -> np.ndarray:
    return expm_hermitian(SZ / 2, angle)


CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
CZ = np.diag([1, 1, 1, -1]).astype(complex)
# CZ-class entangler native to a sigma_y sigma_y exchange; locally equivalent
# to CZ (same Weyl-chamber point) but reachable with Z-only control.
CZ_YY = expm_hermitian(np.kron(SY, SY), np.pi / 4)


def _single(op: np.ndarray, n_qubits: int, on: int = 0) -> np.ndarray:
    return embed(op, on, [2] * n_qubits)


def named_gate(name: str, n_qubits: int) -> np.ndarray:
    """Target unitary for a subsystem of ``n_qubits``.

    Single-qubit gates act on qubit 0; two-qubit gates act on qubits (0, 1);
    any remaining qubits idle.
    """
    if name == "identity":
        return np.eye(2**n_qubits, dtype=complex)
    if name == "ry_pi":
        return _single(ry(np.pi), n_qubits)
    if name == "rx_half_pi":
        return _single(rx(np.pi / 2), n_qubits)
    if name == "ry_pi_all":
        return tensor(*[ry(np.pi)] * n_qubits)
    if name == "rx_half_pi_all":
        return tensor(*[rx(np.pi / 2)] * n_qubits)
    two = {"cnot": CNOT, "cz": CZ, "cz_yy": CZ_YY}
    if name in two:
        if n_qubits < 2:
            raise ValidationError(f"gate {name!r} needs at least two qubits")
        return tensor(two[name], *[I2] * (n_qubits - 2))
    raise ValidationError(f"unknown gate {name!r}")


GATE_NAMES = ("identity", "ry_pi", "rx_half_pi", "ry_pi_all", "rx_half_pi_all", "cnot", "cz", "cz_yy")
