"""First-order crosstalk deviations on subsystem pairs.

For a crosstalk operator ``H`` on the pair space the directional deviation of
the crosstalk-free pair propagator is

    D = -i U(T) \\int_0^T U(t)^dag H U(t) dt,

and its normalised norm ``f_pair = ||D||_F^2 / d_pair`` is the pair's share of
the second-order fidelity loss. ``D`` is read off the upper-right block of
the propagator of the block generator ``[[A, H], [0, A]]`` (Van Loan); a
midpoint-rule quadrature of the integral serves as an independent check.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import ValidationError, expi_divdiff1, is_hermitian, random_unitary
from .model import PairSpace, SystemModel, pair_space
from .pulses import PulseSequence


@dataclass(frozen=True)
class DeviationResult:
    U_pair: np.ndarray
    D: np.ndarray
    f_pair: float
    pair: tuple = ()

    @property
    def d_pair(self) -> int:
        return self.D.shape[0]


@dataclass(frozen=True)
class VanLoanState:
    """Accumulated block propagator ``V = [[U, D], [0, U]]``."""

    block_generator: np.ndarray
    V: np.ndarray

    @property
    def d_pair(self) -> int:
        return self.V.shape[0] // 2

    @property
    def U(self) -> np.ndarray:
        d = self.d_pair
        return self.V[:d, :d]

    @property
    def D(self) -> np.ndarray:
        d = self.d_pair
        return self.V[:d, d:]

    @property
    def lower_left(self) -> np.ndarray:
        d = self.d_pair
        return self.V[d:, :d]


def _pair_generators(pair: PairSpace, pulse_k: PulseSequence, pulse_j: PulseSequence):
    if pulse_k.n_slices != pulse_j.n_slices or not np.isclose(pulse_k.T, pulse_j.T, rtol=1e-15):
        raise ValidationError("pair pulses must share n_slices and T")
    amps = np.hstack([pulse_k.amplitudes, pulse_j.amplitudes])
    if amps.shape[1] != len(pair.channels_pair):
        raise ValidationError(
            f"{amps.shape[1]} pulse channels for {len(pair.channels_pair)} pair channels"
        )
    if not is_hermitian(pair.crosstalk_pair):
        raise ValidationError("crosstalk operator must be Hermitian")
    gens = np.stack([c.generator for c in pair.channels_pair]) if pair.channels_pair else None
    out = np.repeat(pair.drift_pair[None], amps.shape[0], axis=0)
    if gens is not None:
        out = out + np.einsum("mc,cab->mab", amps, gens)
    return out, pulse_k.T / pulse_k.n_slices


def block_expm(a: np.ndarray, h: np.ndarray, dt: float):
    """Blocks ``(U, X)`` of ``exp(-i dt [[a, h], [0, a]])`` for Hermitian ``a``.

    In the eigenbasis of ``a`` the upper-right block is ``h_ab * g[l_a, l_b]``
    with ``g(x) = exp(-i x dt)``.
    """
    w, v = np.linalg.eigh(a)
    u = (v * np.exp(-1j * w * dt)) @ v.conj().T
    ht = v.conj().T @ h @ v
    x = v @ (ht * expi_divdiff1(w[:, None], w[None, :], dt)) @ v.conj().T
    return u, x


def vanloan_deviation(pair: PairSpace, pulse_k: PulseSequence, pulse_j: PulseSequence,
                      method: str = "eigh", return_state: bool = False):
    """Deviation ``D`` of the pair propagator along its crosstalk operator.

    ``method="eigh"`` uses closed-form block exponentials; ``method="expm"``
    exponentiates the dense ``2 d_pair`` block generator with scipy and keeps
    the full block propagator (``return_state=True`` returns it as a
    :class:`VanLoanState`).
    """
    gens, dt = _pair_generators(pair, pulse_k, pulse_j)
    h = pair.crosstalk_pair
    d = pair.d_pair
    if method == "eigh":
        U = np.eye(d, dtype=complex)
        D = np.zeros((d, d), dtype=complex)
        for a in gens:
            um, xm = block_expm(a, h, dt)
            D = um @ D + xm @ U
            U = um @ U
        state = None
    elif method == "expm":
        V = np.eye(2 * d, dtype=complex)
        block = None
        for a in gens:
            block = np.block([[a, h], [np.zeros_like(a), a]])
            V = scipy.linalg.expm(-1j * dt * block) @ V
        state = VanLoanState(block, V)
        U, D = state.U.copy(), state.D.copy()
    else:
        raise ValueError(f"unknown method {method!r}")
    res = DeviationResult(U, D, float(np.linalg.norm(D) ** 2 / d))
    if return_state:
        return res, state
    return res


def quadrature_deviation(pair: PairSpace, pulse_k: PulseSequence, pulse_j: PulseSequence,
                         substeps: int = 64) -> DeviationResult:
    """Midpoint-rule evaluation of the toggling-frame integral (oracle path)."""
    if substeps < 1:
        raise ValidationError("substeps must be >= 1")
    gens, dt = _pair_generators(pair, pulse_k, pulse_j)
    h = pair.crosstalk_pair
    d = pair.d_pair
    step = dt / substeps
    U = np.eye(d, dtype=complex)
    acc = np.zeros((d, d), dtype=complex)
    offsets = (np.arange(substeps) + 0.5) * step
    for a in gens:
        w, v = np.linalg.eigh(a)
        for s in offsets:
            ut = (v * np.exp(-1j * w * s)) @ v.conj().T @ U
            acc += ut.conj().T @ h @ ut
        U = (v * np.exp(-1j * w * dt)) @ v.conj().T @ U
    D = -1j * U @ acc * step
    return DeviationResult(U, D, float(np.linalg.norm(D) ** 2 / d))


def model_deviations(model: SystemModel, pulses, workers: int = 1,
                     method: str = "eigh") -> list[DeviationResult]:
    """One :class:`DeviationResult` per crosstalk term, in sorted pair order."""
    terms = sorted(model.crosstalk, key=lambda t: t.pair)

    def one(t):
        k, j = t.pair
        res = vanloan_deviation(pair_space(model, k, j), pulses[k], pulses[j], method=method)
        return DeviationResult(res.U_pair, res.D, res.f_pair, pair=t.pair)

    if workers > 1 and len(terms) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, terms))
    return [one(t) for t in terms]


def dyson_fidelity(model: SystemModel, deviations, subsystem_fidelities,
                   leading: str = "product") -> float:
    """Second-order surrogate ``prod f_Sk - sum f_pair``.

    ``leading="unit"`` uses 1 in place of the product, the form that assumes
    the crosstalk-free evolution hits the target exactly.
    """
    if len(deviations) != len(model.crosstalk):
        raise ValidationError("need one deviation per crosstalk term")
    f = np.asarray(subsystem_fidelities, dtype=float)
    if np.any(f < -1e-12) or np.any(f > 1 + 1e-12):
        raise ValidationError("subsystem fidelities must lie in [0, 1]")
    lead = float(np.prod(f)) if leading == "product" else 1.0
    return lead - float(sum(r.f_pair for r in deviations))


def pair_norm_factorization_check(D: np.ndarray, rest_dim: int,
                                  rng: np.random.Generator | None = None) -> float:
    """``| ||D (x) U_rest||^2/(d rest) - ||D||^2/d |`` for a random unitary ``U_rest``."""
    if rest_dim < 1:
        raise ValidationError("rest_dim must be >= 1")
    D = np.asarray(D, dtype=complex)
    d = D.shape[0]
    if rest_dim == 1:
        ur = np.eye(1)
    else:
        ur = random_unitary(rest_dim, rng or np.random.default_rng(0))
    full = np.kron(D, ur)
    lhs = np.linalg.norm(full) ** 2 / (d * rest_dim)
    rhs = np.linalg.norm(D) ** 2 / d
    return float(abs(lhs - rhs))


def full_space_deviation(model: SystemModel, pulses, term_index: int) -> np.ndarray:
    """Deviation computed on the whole space (used to test the pair reduction)."""
    from .core import embed, embed_two

    dims = model.dims
    t = model.crosstalk[term_index]
    h = embed_two(t.operator, t.pair[0], t.pair[1], dims)
    gens = []
    n = pulses[0].n_slices
    dt = pulses[0].T / n
    for m in range(n):
        a = sum(embed(s.drift + np.einsum("c,cab->ab", p.amplitudes[m], s.generators), k, dims)
                for k, (s, p) in enumerate(zip(model.subsystems, pulses)))
        gens.append(a)
    U = np.eye(model.full_dim, dtype=complex)
    D = np.zeros_like(U)
    for a in gens:
        um, xm = block_expm(a, h, dt)
        D = um @ D + xm @ U
        U = um @ U
    return D


__all__ = [
    "DeviationResult",
    "VanLoanState",
    "block_expm",
    "vanloan_deviation",
    "quadrature_deviation",
    "model_deviations",
    "dyson_fidelity",
    "pair_norm_factorization_check",
    "full_space_deviation",
]
