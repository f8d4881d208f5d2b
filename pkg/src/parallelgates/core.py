"""Dense operator algebra and piecewise-constant propagation.

All operators are plain complex ``numpy`` arrays. Hamiltonians are in angular
frequency units (rad/s) and times in seconds, so a slice propagator is
``exp(-1j * H * dt)``.

Convention: propagators are accumulated with the latest slice multiplied on
the *left*, ``U = U_n ... U_2 U_1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp

HERMITIAN_RTOL = 1e-12


class ValidationError(ValueError):
    """Raised when an operator or schedule violates its contract."""


def as_operator(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"operator must be square, got shape {a.shape}")
    return a


def is_hermitian(h, rtol: float = HERMITIAN_RTOL) -> bool:
    if sp.issparse(h):
        diff = sp.linalg.norm(h - h.conj().T)
        return diff <= rtol * max(sp.linalg.norm(h), 1.0)
    h = np.asarray(h)
    scale = max(np.linalg.norm(h), 1.0)
    return np.linalg.norm(h - h.conj().T) <= rtol * scale


def unitarity_error(u: np.ndarray) -> float:
    u = np.asarray(u)
    return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0])))


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    return unitarity_error(u) <= atol * np.sqrt(u.shape[0])


def dagger(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2).conj()


def tensor(*ops) -> np.ndarray:
    """Kronecker product of one or more operators (first factor is major)."""
    if not ops:
        raise ValidationError("tensor needs at least one operand")
    return reduce(np.kron, (np.asarray(o, dtype=complex) for o in ops))


def embed(op: np.ndarray, index: int, dims: list[int]) -> np.ndarray:
    """Place ``op`` on factor ``index`` of a product space with factor ``dims``."""
    factors = [np.eye(d) for d in dims]
    factors[index] = op
    return tensor(*factors)


def embed_sparse(op: np.ndarray, index: int, dims: list[int]) -> sp.csr_matrix:
    left = int(np.prod(dims[:index], dtype=int))
    right = int(np.prod(dims[index + 1:], dtype=int))
    out = sp.kron(sp.identity(left, format="csr"), sp.csr_matrix(op), format="csr")
    return sp.kron(out, sp.identity(right, format="csr"), format="csr")


def embed_two(op: np.ndarray, k: int, j: int, dims: list[int]) -> np.ndarray:
    """Embed an operator on factors ``(k, j)`` (in that order) of a product space."""
    n = len(dims)
    rest = [i for i in range(n) if i not in (k, j)]
    order = [k, j] + rest
    d_rest = int(np.prod([dims[i] for i in rest], dtype=int))
    full = np.kron(np.asarray(op, dtype=complex), np.eye(d_rest))
    shape = [dims[i] for i in order]
    full = full.reshape(shape + shape)
    inv = np.argsort(order)
    full = full.transpose(list(inv) + [n + i for i in inv])
    d = int(np.prod(dims, dtype=int))
    return full.reshape(d, d)


def expm_hermitian(h, dt: float) -> np.ndarray:
    """``exp(-i h dt)`` via the eigendecomposition of the Hermitian ``h``."""
    h = as_operator(h)
    if not is_hermitian(h):
        raise ValidationError("expm_hermitian requires a Hermitian generator")
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


@dataclass(frozen=True)
class SliceSchedule:
    """Piecewise-constant generators ``H_m = static + sum_c a[m, c] C_c``.

    ``T`` is stored; ``dt = T / n_slices`` is derived. Control operators may be
    dense arrays or scipy sparse matrices (used for large full-space runs).
    """

    T: float
    static: np.ndarray
    controls: tuple = ()
    amplitudes: np.ndarray = field(default_factory=lambda: np.zeros((1, 0)))

    def __post_init__(self):
        static = as_operator(self.static)
        amps = np.atleast_2d(np.asarray(self.amplitudes, dtype=float))
        if amps.shape[0] < 1:
            raise ValidationError("schedule needs at least one slice")
        if amps.shape[1] != len(self.controls):
            raise ValidationError(
                f"{amps.shape[1]} amplitude columns for {len(self.controls)} controls"
            )
        for c in self.controls:
            if c.shape != static.shape:
                raise ValidationError(f"control shape {c.shape} != {static.shape}")
        if not self.T > 0:
            raise ValidationError("total duration must be positive")
        object.__setattr__(self, "static", static)
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_generators(cls, T: float, generators) -> "SliceSchedule":
        gens = [as_operator(g) for g in generators]
        if not gens:
            raise ValidationError("schedule needs at least one slice")
        dims = {g.shape for g in gens}
        if len(dims) != 1:
            raise ValidationError(f"slice dimension mismatch: {sorted(dims)}")
        d = gens[0].shape[0]
        return cls(T=T, static=np.zeros((d, d), complex), controls=tuple(gens),
                   amplitudes=np.eye(len(gens)))

    @property
    def n_slices(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def dim(self) -> int:
        return self.static.shape[0]

    @property
    def dt(self) -> float:
        return self.T / self.n_slices

    def generator(self, m: int) -> np.ndarray:
        h = self.static.copy()
        for a, c in zip(self.amplitudes[m], self.controls):
            if a == 0.0:
                continue
            if sp.issparse(c):
                coo = c.tocoo()
                np.add.at(h, (coo.row, coo.col), a * coo.data)
            else:
                h += a * c
        return h

    def generators(self) -> np.ndarray:
        return np.stack([self.generator(m) for m in range(self.n_slices)])


def slice_propagators(generators: np.ndarray, dt: float) -> np.ndarray:
    """Batched ``exp(-i H_m dt)`` for a stack of Hermitian generators."""
    w, v = np.linalg.eigh(generators)
    return (v * np.exp(-1j * w * dt)[..., None, :]) @ dagger(v)


def invariant_blocks(schedule: SliceSchedule) -> list[np.ndarray]:
    """Index sets of the subspaces left invariant by every slice generator.

    These are the connected components of the joint sparsity graph of the
    static part and the controls, e.g. the two global-parity sectors of an
    array coupled only through parity-preserving terms.
    """
    from scipy.sparse.csgraph import connected_components

    pattern = sp.csr_matrix(np.abs(schedule.static) > 0, dtype=float)
    for c in schedule.controls:
        pattern = pattern + (abs(c) if sp.issparse(c) else sp.csr_matrix(np.abs(c)))
    n, labels = connected_components(pattern, directed=False)
    return [np.flatnonzero(labels == b) for b in range(n)]


def _propagate_dense(schedule: SliceSchedule) -> np.ndarray:
    d = schedule.dim
    u = np.eye(d, dtype=complex)
    dt = schedule.dt
    # batch small problems, stream large ones
    chunk = max(1, int(2**22 // (d * d)))
    for start in range(0, schedule.n_slices, chunk):
        stop = min(start + chunk, schedule.n_slices)
        gens = np.stack([schedule.generator(m) for m in range(start, stop)])
        for um in slice_propagators(gens, dt):
            u = um @ u
    return u


def _restrict(schedule: SliceSchedule, idx: np.ndarray) -> SliceSchedule:
    sel = np.ix_(idx, idx)
    ctrls = tuple((c.tocsr()[idx][:, idx].toarray() if sp.issparse(c) else c[sel])
                  for c in schedule.controls)
    return SliceSchedule(schedule.T, schedule.static[sel], ctrls, schedule.amplitudes)


def propagate(schedule: SliceSchedule, check: bool = True, split: bool = True) -> np.ndarray:
    """Time-ordered product ``U_n ... U_1`` of the slice propagators.

    With ``split`` the product is formed separately on each invariant block
    (see :func:`invariant_blocks`) when there is more than one.
    """
    if check:
        if not is_hermitian(schedule.static) or not all(
            is_hermitian(c) for c in schedule.controls
        ):
            raise ValidationError("all slice generators must be Hermitian")
    blocks = invariant_blocks(schedule) if split and schedule.dim >= 64 else []
    if len(blocks) < 2:
        return _propagate_dense(schedule)
    u = np.zeros((schedule.dim,) * 2, dtype=complex)
    for idx in blocks:
        u[np.ix_(idx, idx)] = _propagate_dense(_restrict(schedule, idx))
    return u


def trace_fidelity(u, target) -> float:
    """Phase-insensitive gate fidelity ``|Tr(U target^dag)|^2 / d^2``."""
    u = as_operator(u)
    target = as_operator(target)
    if u.shape != target.shape:
        raise ValidationError(f"dimension mismatch {u.shape} vs {target.shape}")
    d = u.shape[0]
    # vdot conjugates its first argument: Tr(target^dag U)
    return float(abs(np.vdot(target, u)) ** 2 / d**2)


def random_hermitian(d: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (a + a.conj().T) / 2


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


# ---------------------------------------------------------------------------
# Divided differences of g(x) = exp(-i x dt).  These give closed forms for the
# Van Loan block exponential and for exact slice derivatives in the
# eigenbasis of each slice generator.
# ---------------------------------------------------------------------------

_SERIES_SPREAD = 1e-3
_SERIES_ORDER = 10


def expi_divdiff1(x, y, dt: float) -> np.ndarray:
    """First divided difference ``g[x, y]`` of ``g(x) = exp(-i x dt)``.

    Uses the sinc form, which is exact and stable for coincident arguments.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    half = 0.5 * (x - y) * dt
    return -1j * dt * np.exp(-0.5j * (x + y) * dt) * np.sinc(half / np.pi)


def expi_divdiff2(x, y, z, dt: float) -> np.ndarray:
    """Second divided difference ``g[x, y, z]`` of ``g(x) = exp(-i x dt)``.

    Symmetric in its arguments. The recursive quotient is taken across the
    widest pair; clusters narrower than ``1e-3 / dt`` fall back to a Taylor
    series about the cluster mean.
    """
    x, y, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, z)))
    lo = np.minimum(np.minimum(x, y), z)
    hi = np.maximum(np.maximum(x, y), z)
    mid = x + y + z - lo - hi
    spread = (hi - lo) * dt
    wide = spread > _SERIES_SPREAD

    out = np.empty(x.shape, dtype=complex)
    if np.any(wide):
        l, m, h = lo[wide], mid[wide], hi[wide]
        out[wide] = (expi_divdiff1(l, m, dt) - expi_divdiff1(m, h, dt)) / (l - h)
    narrow = ~wide
    if np.any(narrow):
        l, m, h = lo[narrow], mid[narrow], hi[narrow]
        c = (l + m + h) / 3.0
        u0, u1, u2 = (l - c) * dt, (m - c) * dt, (h - c) * dt
        # complete homogeneous symmetric polynomials h_n(u0, u1, u2)
        h2 = [np.ones_like(u0)]
        h1 = [np.ones_like(u0)]  # h_n(u0, u1)
        for n in range(1, _SERIES_ORDER - 1):
            h1.append(u0**n + u1 * h1[-1])
            h2.append(h1[-1] + u2 * h2[-1])
        acc = np.zeros(u0.shape, dtype=complex)
        fact = 2.0
        for k in range(2, _SERIES_ORDER + 1):
            if k > 2:
                fact *= k
            acc += (-1j) ** k / fact * h2[k - 2]
        out[narrow] = dt**2 * np.exp(-1j * c * dt) * acc
    return out
