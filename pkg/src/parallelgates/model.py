"""Device description: subsystems, crosstalk topology and control channels.

Builders cover three platforms: a ZZ-coupled NV chain, a liquid-state NMR
molecule and a square array of two-qubit transmon subsystems.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    SliceSchedule,
    ValidationError,
    embed,
    embed_sparse,
    embed_two,
    is_hermitian,
    is_unitary,
    tensor,
)
from .gates import I2, LOWER, NUMBER, RAISE, SX, SY, SZ, named_gate

TWO_PI = 2 * np.pi
DEFAULT_DIM_CAP = 2**12
PLATFORMS = ("nv_chain", "nmr", "transmon_array", "custom")


@dataclass(frozen=True)
class ControlChannel:
    generator: np.ndarray
    amplitude_bound: float
    label: str

    def __post_init__(self):
        if not is_hermitian(self.generator):
            raise ValidationError(f"channel {self.label!r}: generator not Hermitian")
        if not self.amplitude_bound > 0:
            raise ValidationError(f"channel {self.label!r}: amplitude bound must be > 0")


@dataclass(frozen=True)
class SubsystemSpec:
    """One subsystem ``S_k``: drift, controls and local target gate.

    ``z_frame_qubits`` lists local qubits whose Z frame is a free software
    phase (virtual-Z); fidelities are then maximised over those frames.
    """

    index: int
    qubit_labels: tuple
    drift: np.ndarray
    channels: tuple
    target: np.ndarray
    z_frame_qubits: tuple = ()

    def __post_init__(self):
        d = self.drift.shape[0]
        if self.drift.shape != (d, d) or self.target.shape != (d, d):
            raise ValidationError(f"subsystem {self.index}: drift/target dims differ")
        if d != 2 ** len(self.qubit_labels):
            raise ValidationError(f"subsystem {self.index}: dim {d} does not match qubit count")
        if not is_hermitian(self.drift):
            raise ValidationError(f"subsystem {self.index}: drift not Hermitian")
        if not is_unitary(self.target):
            raise ValidationError(f"subsystem {self.index}: target not unitary")
        for ch in self.channels:
            if ch.generator.shape != (d, d):
                raise ValidationError(f"subsystem {self.index}: channel {ch.label} has wrong dim")

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_qubits(self) -> int:
        return len(self.qubit_labels)

    @property
    def generators(self) -> np.ndarray:
        return np.stack([c.generator for c in self.channels]) if self.channels else np.zeros((0, self.dim, self.dim), complex)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([c.amplitude_bound for c in self.channels])


@dataclass(frozen=True)
class CrosstalkTerm:
    """Crosstalk ``H_{S_k S_j}`` between subsystems ``k < j``.

    The term is a sum of components ``strength_i * structure_i`` acting on the
    joint space (S_k factor first). ``bounds`` holds the maximum magnitude
    each strength may take.
    """

    pair: tuple
    structures: tuple
    strengths: tuple
    bounds: tuple
    labels: tuple = ()

    def __post_init__(self):
        k, j = self.pair
        if not k < j:
            raise ValidationError(f"crosstalk pair must satisfy k < j, got {self.pair}")
        n = len(self.structures)
        if n == 0 or len(self.strengths) != n or len(self.bounds) != n:
            raise ValidationError("crosstalk components, strengths and bounds must align")
        for s, g, b in zip(self.structures, self.strengths, self.bounds):
            if not is_hermitian(s):
                raise ValidationError(f"crosstalk {self.pair}: structure not Hermitian")
            if abs(g) > b * (1 + 1e-12):
                raise ValidationError(f"crosstalk {self.pair}: |g|={abs(g)} exceeds bound {b}")

    @property
    def operator(self) -> np.ndarray:
        return sum(g * s for g, s in zip(self.strengths, self.structures))

    @property
    def coupling_operator(self) -> np.ndarray:
        """Structure of a single-component term (dimensionless)."""
        return self.structures[0] if len(self.structures) == 1 else self.operator

    @property
    def strength(self) -> float:
        return self.strengths[0] if len(self.strengths) == 1 else 1.0

    @property
    def strength_bound(self) -> float:
        return max(self.bounds)

    def bound_directions(self) -> list[np.ndarray]:
        """Each component at its bound; robust design targets all of them."""
        return [b * s for b, s in zip(self.bounds, self.structures)]

    def with_strengths(self, strengths) -> "CrosstalkTerm":
        return replace(self, strengths=tuple(float(s) for s in strengths))

    def scaled(self, factor: float) -> "CrosstalkTerm":
        return replace(
            self,
            strengths=tuple(factor * g for g in self.strengths),
            bounds=tuple(abs(factor) * b for b in self.bounds),
        )


@dataclass(frozen=True)
class SystemModel:
    subsystems: tuple
    crosstalk: tuple
    platform_tag: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.platform_tag not in PLATFORMS:
            raise ValidationError(f"unknown platform {self.platform_tag!r}")
        labels = [lab for s in self.subsystems for lab in s.qubit_labels]
        if len(labels) != len(set(labels)):
            raise ValidationError("subsystem qubit labels must be pairwise disjoint")
        for i, s in enumerate(self.subsystems):
            if s.index != i:
                raise ValidationError(f"subsystem at position {i} has index {s.index}")
        L = len(self.subsystems)
        for t in self.crosstalk:
            k, j = t.pair
            if not (0 <= k < j < L):
                raise ValidationError(f"crosstalk pair {t.pair} out of range for L={L}")
            d = self.subsystems[k].dim * self.subsystems[j].dim
            for s in t.structures:
                if s.shape != (d, d):
                    raise ValidationError(f"crosstalk {t.pair}: structure dim {s.shape} != {d}")

    @property
    def L(self) -> int:
        return len(self.subsystems)

    @property
    def dims(self) -> list[int]:
        return [s.dim for s in self.subsystems]

    @property
    def full_dim(self) -> int:
        return int(np.prod(self.dims, dtype=object))

    @property
    def n_qubits(self) -> int:
        return sum(s.n_qubits for s in self.subsystems)

    @property
    def full_target(self) -> np.ndarray:
        return tensor(*[s.target for s in self.subsystems])

    def with_crosstalk(self, crosstalk) -> "SystemModel":
        return replace(self, crosstalk=tuple(crosstalk))

    def without_crosstalk(self) -> "SystemModel":
        return replace(self, crosstalk=())

    def scale_crosstalk(self, factor: float) -> "SystemModel":
        return replace(self, crosstalk=tuple(t.scaled(factor) for t in self.crosstalk))

    def with_targets(self, targets) -> "SystemModel":
        subs = tuple(replace(s, target=np.asarray(t, complex)) for s, t in zip(self.subsystems, targets))
        return replace(self, subsystems=subs)

    def restrict(self, indices: Sequence[int]) -> "SystemModel":
        """Sub-model on ``indices`` keeping only crosstalk internal to them."""
        indices = list(indices)
        remap = {old: new for new, old in enumerate(indices)}
        subs = tuple(replace(self.subsystems[i], index=remap[i]) for i in indices)
        terms = []
        for t in self.crosstalk:
            k, j = t.pair
            if k in remap and j in remap:
                nk, nj = remap[k], remap[j]
                if nk > nj:
                    raise ValidationError("restrict() must preserve subsystem order")
                terms.append(replace(t, pair=(nk, nj)))
        return replace(self, subsystems=subs, crosstalk=tuple(terms))


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _single_qubit_channels(n_qubits: int, bound: float, labels) -> tuple:
    chans = []
    for q in range(n_qubits):
        for name, op in (("x", SX), ("y", SY)):
            chans.append(
                ControlChannel(embed(op / 2, q, [2] * n_qubits), bound, f"{labels[q]}_{name}")
            )
    return tuple(chans)


def build_nv_chain(N: int, g: float, amplitude_bound: float | None = None,
                   g_max: float | None = None, target: str = "ry_pi",
                   T: float = 1.0) -> SystemModel:
    """Chain of ``N`` spins with ``H_S = g sum_k Z_k Z_{k+1}``, one spin per subsystem.

    Controls are ``u_x X/2`` and ``u_y Y/2`` on every spin; the default bound
    admits the analytic robust pulse of duration ``T``.
    """
    if N < 2:
        raise ValidationError("NV chain needs N >= 2")
    if amplitude_bound is None:
        amplitude_bound = 4 * np.pi / T
    g_max = abs(g) if g_max is None else g_max
    subs = []
    for k in range(N):
        lab = f"e{k + 1}"
        subs.append(SubsystemSpec(
            index=k, qubit_labels=(lab,), drift=np.zeros((2, 2), complex),
            channels=_single_qubit_channels(1, amplitude_bound, [lab]),
            target=named_gate(target, 1),
        ))
    zz = np.kron(SZ, SZ)
    terms = tuple(
        CrosstalkTerm(pair=(k, k + 1), structures=(zz,), strengths=(float(g),),
                      bounds=(max(g_max, abs(g)),), labels=(f"e{k + 1}-e{k + 2}",))
        for k in range(N - 1)
    )
    return SystemModel(tuple(subs), terms, "nv_chain", meta={"N": N, "g": g})


def build_nmr(omegas_hz, couplings_hz, partition, amplitude_bound: float,
              targets=None, spin_labels=None) -> SystemModel:
    """Liquid-state NMR: ``H = sum Omega_i Z_i/2 + pi sum J_ij Z_i Z_j / 2``.

    ``omegas_hz`` are offsets in Hz (converted to rad/s); ``couplings_hz`` is a
    symmetric J matrix in Hz. Intra-block terms go to subsystem drifts and
    every inter-block coupling becomes a component of the crosstalk term for
    that block pair, with structure ``(pi/2) Z Z`` and strength ``J`` in Hz.
    """
    omegas = np.asarray(omegas_hz, dtype=float)
    J = np.asarray(couplings_hz, dtype=float)
    n = len(omegas)
    if J.shape != (n, n):
        raise ValidationError(f"J matrix must be {n}x{n}")
    if not np.allclose(J, J.T, atol=0, rtol=0):
        raise ValidationError("J matrix must be symmetric")
    flat = [i for block in partition for i in block]
    if sorted(flat) != list(range(n)):
        raise ValidationError("partition must cover every spin exactly once")
    labels = list(spin_labels) if spin_labels is not None else [f"s{i}" for i in range(n)]
    if targets is None:
        targets = ["identity"] * len(partition)
    if len(targets) != len(partition):
        raise ValidationError("one target per subsystem is required")

    subs = []
    for k, block in enumerate(partition):
        nq = len(block)
        dims = [2] * nq
        drift = np.zeros((2**nq, 2**nq), complex)
        for a, i in enumerate(block):
            drift += TWO_PI * omegas[i] * embed(SZ, a, dims) / 2
            for b in range(a + 1, nq):
                jj = block[b]
                if J[i, jj] != 0:
                    drift += np.pi * J[i, jj] * embed(SZ, a, dims) @ embed(SZ, b, dims) / 2
        tgt = targets[k] if not isinstance(targets[k], str) else named_gate(targets[k], nq)
        subs.append(SubsystemSpec(
            index=k, qubit_labels=tuple(labels[i] for i in block), drift=drift,
            channels=_single_qubit_channels(nq, amplitude_bound, [labels[i] for i in block]),
            target=np.asarray(tgt, complex),
        ))

    terms = []
    for k in range(len(partition)):
        for j in range(k + 1, len(partition)):
            bk, bj = partition[k], partition[j]
            structs, strengths, labs = [], [], []
            for a, i in enumerate(bk):
                for b, jj in enumerate(bj):
                    if J[i, jj] == 0:
                        continue
                    zk = embed(SZ, a, [2] * len(bk))
                    zj = embed(SZ, b, [2] * len(bj))
                    structs.append(np.pi / 2 * np.kron(zk, zj))
                    strengths.append(float(J[i, jj]))
                    labs.append(f"{labels[i]}-{labels[jj]}")
            if structs:
                terms.append(CrosstalkTerm(
                    pair=(k, j), structures=tuple(structs), strengths=tuple(strengths),
                    bounds=tuple(abs(s) for s in strengths), labels=tuple(labs),
                ))
    return SystemModel(tuple(subs), tuple(terms), "nmr",
                       meta={"partition": [list(b) for b in partition]})


def enumerate_crosstalk_pairs(q: int) -> list[tuple[int, int]]:
    """Neighbouring subsystem pairs of a ``q x q`` array (1-based labels).

    Subsystems are numbered left to right, top to bottom. For subsystem k:
    right column -> k+q; bottom row -> k+1; last -> none; otherwise
    {k+1, k+q, k+q+1}. The list has ``3q^2 - 4q + 1`` entries.
    """
    if q < 1:
        raise ValidationError("lattice side q must be >= 1")
    pairs = set()
    last = q * q
    for k in range(1, last + 1):
        if k == last:
            continue
        if k % q == 0:
            js = [k + q]
        elif math.ceil(k / q) == q:
            js = [k + 1]
        else:
            js = [k + 1, k + q, k + q + 1]
        pairs.update((k, j) for j in js)
    return sorted(pairs)


@dataclass(frozen=True)
class TransmonParams:
    """Sampled parameters of a ``q x q`` array of two-transmon subsystems.

    Frequencies and couplings are angular (rad/s). Idle frequencies follow a
    checkerboard: in even rows qubit 1 is in the high band and qubit 2 in the
    low band, odd rows are swapped, so every nearest-neighbour pair straddles
    the two bands. Qubit 1 is the tunable one.
    """

    q: int
    omega: np.ndarray        # (L, 2)
    alpha: np.ndarray        # (L, 2), inert at two-level truncation
    J: np.ndarray            # (L,)
    g_max: float
    couplings: dict          # (k, j) 0-based -> (2, 2) array g^{il}
    seed: int
    frame: float = TWO_PI * 6.0e9
    amplitude_bound: float = TWO_PI * 400e6

    HIGH = (TWO_PI * 6.15e9, TWO_PI * 0.15e9)
    LOW = (TWO_PI * 5.85e9, TWO_PI * 0.15e9)
    ALPHA = (TWO_PI * -265e6, TWO_PI * 10e6)
    JK = (TWO_PI * 24e6, TWO_PI * 2e6)

    def __post_init__(self):
        if self.q < 1:
            raise ValidationError("q must be >= 1")
        L = self.q**2
        if np.shape(self.omega) != (L, 2) or np.shape(self.alpha) != (L, 2) or np.shape(self.J) != (L,):
            raise ValidationError("transmon parameter arrays have the wrong shape")
        centre, width = band_centres(self.q)
        if np.any(np.abs(np.asarray(self.omega) - centre) > width * (1 + 1e-12)):
            raise ValidationError("qubit frequency outside its band")
        if np.any(np.abs(np.asarray(self.alpha) - self.ALPHA[0]) > self.ALPHA[1] * (1 + 1e-12)):
            raise ValidationError("anharmonicity outside its band")
        if np.any(np.abs(np.asarray(self.J) - self.JK[0]) > self.JK[1] * (1 + 1e-12)):
            raise ValidationError("intra-pair coupling outside its band")
        bounds = coupling_bounds(self.q, self.g_max)
        for key, g in self.couplings.items():
            if key not in bounds:
                raise ValidationError(f"coupling for non-neighbouring pair {key}")
            if np.any(np.abs(g) > bounds[key] * (1 + 1e-12)):
                raise ValidationError(f"coupling {key} outside its bound")


def band_centres(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Centre and half-width of the idle-frequency band of every qubit, shape ``(q*q, 2)``."""
    hi, lo = TransmonParams.HIGH, TransmonParams.LOW
    row_odd = (np.arange(q * q) // q) % 2 == 1
    first = np.where(row_odd, lo[0], hi[0])
    second = np.where(row_odd, hi[0], lo[0])
    centre = np.column_stack([first, second])
    return centre, np.full_like(centre, hi[1])


def coupling_bounds(q: int, g_max: float) -> dict:
    """Per-qubit-pair coupling bounds between neighbouring subsystems.

    Layout: subsystem k sits at grid cell (row, col) with its qubit 1 on the
    left and qubit 2 on the right. Horizontal neighbours: (2, 1) is nearest
    neighbour. Vertical neighbours: (1, 1) and (2, 2) are nearest neighbours.
    Nearest neighbours are bounded by ``2|g_max|``, all others by ``|g_max|``.
    """
    g = abs(g_max)
    out = {}
    for k1, j1 in enumerate_crosstalk_pairs(q):
        k, j = k1 - 1, j1 - 1
        b = np.full((2, 2), g)
        if j == k + 1:
            b[1, 0] = 2 * g
        elif j == k + q:
            b[0, 0] = b[1, 1] = 2 * g
        out[(k, j)] = b
    return out


def sample_transmon_couplings(q: int, g_max: float, rng: np.random.Generator) -> dict:
    return {key: rng.uniform(-1, 1, size=(2, 2)) * b
            for key, b in coupling_bounds(q, g_max).items()}


def sample_transmon_params(q: int, g_max: float, seed: int, **kw) -> TransmonParams:
    rng = np.random.default_rng(seed)
    L = q * q
    centre, width = band_centres(q)
    omega = centre + width * rng.uniform(-1, 1, (L, 2))
    a0, aw = TransmonParams.ALPHA
    alpha = a0 + aw * rng.uniform(-1, 1, (L, 2))
    j0, jw = TransmonParams.JK
    J = j0 + jw * rng.uniform(-1, 1, L)
    couplings = sample_transmon_couplings(q, g_max, rng)
    return TransmonParams(q=q, omega=omega, alpha=alpha, J=J, g_max=g_max,
                          couplings=couplings, seed=seed, **kw)


def _quadrature(k_dims, index):
    # (a - a^dag) on one qubit of a two-qubit subsystem
    return embed(LOWER - RAISE, index, k_dims)


def build_transmon_array(params: TransmonParams, target: str = "cz_yy",
                         z_frames: bool = True) -> SystemModel:
    """Two-level transmon array in a frame rotating at ``params.frame``.

    ``H_{S_k} = sum_i (omega_ki - frame) n_ki - J_k (a_k1 - a_k1^dag)(a_k2 - a_k2^dag)``;
    crosstalk ``-sum_il g^{il} (a_ki - a_ki^dag)(a_jl - a_jl^dag)``; a single
    channel ``u_k n_k1`` per subsystem.
    """
    q = params.q
    dims = [2, 2]
    n1 = embed(NUMBER, 0, dims)
    n2 = embed(NUMBER, 1, dims)
    subs = []
    for k in range(q * q):
        det = params.omega[k] - params.frame
        drift = det[0] * n1 + det[1] * n2 - params.J[k] * _quadrature(dims, 0) @ _quadrature(dims, 1)
        labs = (f"Q{k + 1}a", f"Q{k + 1}b")
        subs.append(SubsystemSpec(
            index=k, qubit_labels=labs, drift=drift,
            channels=(ControlChannel(n1, params.amplitude_bound, f"{labs[0]}_n"),),
            target=named_gate(target, 2),
            z_frame_qubits=(0, 1) if z_frames else (),
        ))
    bounds = coupling_bounds(q, params.g_max)
    terms = []
    for (k, j), b in sorted(bounds.items()):
        g = params.couplings.get((k, j), np.zeros((2, 2)))
        structs, strengths, bnds, labs = [], [], [], []
        for i in range(2):
            for l in range(2):
                structs.append(-np.kron(_quadrature(dims, i), _quadrature(dims, l)))
                strengths.append(float(g[i, l]))
                bnds.append(float(b[i, l]))
                labs.append(f"{subs[k].qubit_labels[i]}-{subs[j].qubit_labels[l]}")
        terms.append(CrosstalkTerm(pair=(k, j), structures=tuple(structs),
                                   strengths=tuple(strengths), bounds=tuple(bnds),
                                   labels=tuple(labs)))
    return SystemModel(tuple(subs), tuple(terms), "transmon_array",
                       meta={"q": q, "g_max": params.g_max, "seed": params.seed})


def resample_transmon_crosstalk(model: SystemModel, g_max: float,
                                rng: np.random.Generator) -> SystemModel:
    """Fresh coupling draw within the bounds set by ``g_max``."""
    q = model.meta["q"]
    bounds = coupling_bounds(q, g_max)
    terms = []
    for t in model.crosstalk:
        b = bounds[t.pair]
        g = rng.uniform(-1, 1, size=(2, 2)) * b
        terms.append(replace(t, strengths=tuple(float(x) for x in g.ravel()),
                             bounds=tuple(float(x) for x in b.ravel())))
    meta = dict(model.meta, g_max=g_max)
    return replace(model, crosstalk=tuple(terms), meta=meta)


# ---------------------------------------------------------------------------
# pair and full-space assembly
# ---------------------------------------------------------------------------

class PairSpace(NamedTuple):
    drift_pair: np.ndarray
    channels_pair: list
    crosstalk_pair: np.ndarray
    d_pair: int
    dims: tuple


def pair_space(model: SystemModel, k: int, j: int) -> PairSpace:
    """Operators of subsystems ``k < j`` on their joint space (S_k factor first)."""
    L = model.L
    if not (0 <= k < L and 0 <= j < L) or k == j:
        raise ValidationError(f"invalid subsystem pair ({k}, {j})")
    if k > j:
        raise ValidationError("pair_space expects k < j")
    sk, sj = model.subsystems[k], model.subsystems[j]
    ik, ij = np.eye(sk.dim), np.eye(sj.dim)
    drift = np.kron(sk.drift, ij) + np.kron(ik, sj.drift)
    chans = [replace(c, generator=np.kron(c.generator, ij)) for c in sk.channels]
    chans += [replace(c, generator=np.kron(ik, c.generator)) for c in sj.channels]
    xt = np.zeros((sk.dim * sj.dim,) * 2, complex)
    for t in model.crosstalk:
        if t.pair == (k, j):
            xt = xt + t.operator
    return PairSpace(drift, chans, xt, sk.dim * sj.dim, (sk.dim, sj.dim))


def assemble_full(model: SystemModel, pulses, dim_cap: int = DEFAULT_DIM_CAP) -> SliceSchedule:
    """Full-space schedule: every drift, every crosstalk term and every channel."""
    if len(pulses) != model.L:
        raise ValidationError(f"need {model.L} pulses, got {len(pulses)}")
    d = model.full_dim
    if d > dim_cap:
        raise DimensionCapExceeded(
            f"full-space dim {d} exceeds cap {dim_cap}; use block evaluation instead"
        )
    n = {p.n_slices for p in pulses}
    Ts = {p.T for p in pulses}
    if len(n) != 1 or len(Ts) != 1:
        raise ValidationError("all pulses must share n_slices and T")
    dims = model.dims
    static = np.zeros((d, d), complex)
    for k, s in enumerate(model.subsystems):
        if np.any(s.drift):
            static += embed(s.drift, k, dims)
    for t in model.crosstalk:
        op = t.operator
        if np.any(op):
            static += embed_two(op, t.pair[0], t.pair[1], dims)
    sparse = d > 256
    controls, cols = [], []
    for k, (s, p) in enumerate(zip(model.subsystems, pulses)):
        if p.amplitudes.shape[1] != len(s.channels):
            raise ValidationError(f"pulse {k} has {p.amplitudes.shape[1]} channels, "
                                  f"subsystem has {len(s.channels)}")
        for c, ch in enumerate(s.channels):
            op = embed_sparse(ch.generator, k, dims) if sparse else embed(ch.generator, k, dims)
            controls.append(op)
            cols.append(p.amplitudes[:, c])
    amps = np.column_stack(cols) if cols else np.zeros((pulses[0].n_slices, 0))
    return SliceSchedule(T=pulses[0].T, static=static, controls=tuple(controls), amplitudes=amps)


class DimensionCapExceeded(ValidationError):
    """Full-space evaluation requested beyond the configured dimension cap."""
