"""Ground-truth evaluation: full-space fidelity, block fidelity, sweeps and decay fits."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import ValidationError, propagate, tensor, trace_fidelity
from .grape import effective_targets
from .model import DEFAULT_DIM_CAP, SystemModel, assemble_full
from .pulses import fmt

LOG_FIT_FLOOR = 0.2


def _map(fn, items, workers: int):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def full_target(model: SystemModel, pulses=None) -> np.ndarray:
    """Tensor product of subsystem targets, virtual-Z frames resolved from ``pulses``.

    Frames are fixed by the crosstalk-free subsystem evolution (a calibration
    step) and are therefore the same for every crosstalk realisation.
    """
    if pulses is None or not any(s.z_frame_qubits for s in model.subsystems):
        return model.full_target
    return tensor(*effective_targets(model, pulses))


def full_propagator(model: SystemModel, pulses, dim_cap: int = DEFAULT_DIM_CAP) -> np.ndarray:
    return propagate(assemble_full(model, pulses, dim_cap), check=False)


def exact_fidelity(model: SystemModel, pulses, target=None, dim_cap: int = DEFAULT_DIM_CAP) -> float:
    """Full-space fidelity with every crosstalk term active."""
    U = full_propagator(model, pulses, dim_cap)
    tgt = full_target(model, pulses) if target is None else target
    return trace_fidelity(U, tgt)


# ---------------------------------------------------------------------------
# block fidelity
# ---------------------------------------------------------------------------

def lattice_tiles(q: int) -> list[list[int]]:
    """0-based subsystem indices of the 2x2 tiles of a ``q x q`` lattice.

    Subsystem ``k`` sits at row ``k // q``, column ``k % q``. For odd ``q`` the
    last column and row of tiles are 2x1, 1x2 or 1x1 (no overlap).
    """
    if q < 1:
        raise ValidationError("q must be >= 1")
    tiles = []
    for r0 in range(0, q, 2):
        for c0 in range(0, q, 2):
            tiles.append(sorted(r * q + c for r in range(r0, min(r0 + 2, q))
                                for c in range(c0, min(c0 + 2, q))))
    return tiles


@dataclass(frozen=True)
class BlockFidelityReport:
    q: int
    tiles: tuple
    fidelities: tuple

    @property
    def n_blocks(self) -> int:
        return len(self.tiles)

    @property
    def F4_min(self) -> float:
        return float(min(self.fidelities))

    @property
    def F4_mean(self) -> float:
        return float(np.mean(self.fidelities))

    @property
    def F4(self) -> float:
        return self.F4_min


def block_fidelity(model: SystemModel, pulses, q: int | None = None, workers: int = 1,
                   dim_cap: int = DEFAULT_DIM_CAP) -> BlockFidelityReport:
    """Exact fidelity of every 2x2 tile with inter-tile couplings dropped."""
    q = q if q is not None else model.meta.get("q")
    if q is None or q * q != model.L:
        raise ValidationError("block_fidelity needs a q x q lattice model")
    tiles = lattice_tiles(q)

    def one(tile):
        sub = model.restrict(tile)
        ps = [pulses[i] for i in tile]
        return exact_fidelity(sub, ps, dim_cap=dim_cap)

    fids = _map(one, tiles, workers)
    return BlockFidelityReport(q, tuple(tuple(t) for t in tiles), tuple(float(f) for f in fids))


# ---------------------------------------------------------------------------
# repeated application
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    eps_lin: float
    eps_exp: float
    res_lin: float       # sum of squared residuals in F
    res_exp: float

    @property
    def residual_gap(self) -> float:
        """``|res_lin - res_exp| / max(res_lin, res_exp)`` (0 if both vanish)."""
        top = max(self.res_lin, self.res_exp)
        return 0.0 if top == 0 else abs(self.res_lin - self.res_exp) / top


def fit_decay(M, F) -> DecayFit:
    """``1 - F = eps M`` (least squares through origin) and ``F = exp(-eps M)``.

    The exponential fit is a log-linear least-squares fit through the origin
    on points with ``F >= 0.2``; residuals for both are reported in ``F``.
    """
    M = np.asarray(M, dtype=float)
    F = np.asarray(F, dtype=float)
    eps_lin = float(np.dot(M, 1 - F) / np.dot(M, M))
    res_lin = float(np.sum((1 - F - eps_lin * M) ** 2))
    keep = F >= LOG_FIT_FLOOR
    if not np.any(keep):
        return DecayFit(eps_lin, float("nan"), res_lin, float("nan"))
    Mk, Fk = M[keep], F[keep]
    eps_exp = float(-np.dot(Mk, np.log(Fk)) / np.dot(Mk, Mk))
    res_exp = float(np.sum((Fk - np.exp(-eps_exp * Mk)) ** 2))
    return DecayFit(eps_lin, eps_exp, res_lin, res_exp)


@dataclass(frozen=True)
class DecaySeries:
    M_values: tuple
    F_values: tuple
    fit: DecayFit
    violations: tuple = ()   # M values where F rose by more than 1e-9

    def to_rows(self):
        return [(m, f) for m, f in zip(self.M_values, self.F_values)]


def repeat_unitary(U: np.ndarray, target: np.ndarray, M_values: Sequence[int]) -> DecaySeries:
    M_values = sorted(int(m) for m in M_values)
    if not M_values or M_values[0] < 1:
        raise ValidationError("M values must be positive integers")
    F = []
    Um = np.eye(U.shape[0], dtype=complex)
    Tm = np.eye(U.shape[0], dtype=complex)
    done = 0
    for m in M_values:
        while done < m:
            Um = U @ Um
            Tm = target @ Tm
            done += 1
        F.append(trace_fidelity(Um, Tm))
    viol = tuple(M_values[i] for i in range(1, len(F)) if F[i] > F[i - 1] + 1e-9)
    return DecaySeries(tuple(M_values), tuple(F), fit_decay(M_values, F), viol)


def repeat_gate(model: SystemModel, pulses, M_values, target=None,
                dim_cap: int = DEFAULT_DIM_CAP) -> DecaySeries:
    """Fidelity of ``U(T)^M`` against ``target^M``."""
    U = full_propagator(model, pulses, dim_cap)
    tgt = full_target(model, pulses) if target is None else target
    return repeat_unitary(U, tgt, M_values)


# ---------------------------------------------------------------------------
# coupling sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    axis: tuple
    F_robust: np.ndarray       # (n_axis, n_seeds)
    F_primitive: np.ndarray
    seeds: tuple = ()
    meta: dict = field(default_factory=dict, compare=False)

    @staticmethod
    def _stats(a):
        return a.mean(axis=1), a.min(axis=1), a.max(axis=1)

    @property
    def robust_spread(self) -> np.ndarray:
        return self.F_robust.max(axis=1) - self.F_robust.min(axis=1)

    @property
    def primitive_spread(self) -> np.ndarray:
        return self.F_primitive.max(axis=1) - self.F_primitive.min(axis=1)

    def to_csv(self, axis_label: str = "g") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([axis_label, "F_robust_mean", "F_robust_min", "F_robust_max",
                    "F_primitive_mean", "F_primitive_min", "F_primitive_max"])
        rm, rlo, rhi = self._stats(self.F_robust)
        pm, plo, phi = self._stats(self.F_primitive)
        for i, g in enumerate(self.axis):
            w.writerow([fmt(g), *(fmt(x) for x in (rm[i], rlo[i], rhi[i], pm[i], plo[i], phi[i]))])
        return buf.getvalue()

    def write_csv(self, path, axis_label: str = "g") -> Path:
        path = Path(path)
        path.write_text(self.to_csv(axis_label))
        return path


def coupling_sweep(model_family: Callable[[float, int], SystemModel], pulses_robust, pulses_primitive,
                   axis, seeds=(0,), mode: str = "exact", workers: int = 1,
                   dim_cap: int = DEFAULT_DIM_CAP) -> SweepResult:
    """Fidelity of fixed pulses across coupling values (and coupling draws).

    ``model_family(value, seed)`` returns the model at one axis point; the
    pulses are never re-optimised. ``mode="block"`` reports the minimum tile
    fidelity instead of the full-space fidelity.
    """
    if mode not in ("exact", "block"):
        raise ValidationError("mode must be 'exact' or 'block'")
    axis = tuple(float(a) for a in axis)
    seeds = tuple(int(s) for s in seeds)
    jobs = [(i, s) for i in range(len(axis)) for s in range(len(seeds))]

    def evaluate(model, pulses):
        if mode == "block":
            return block_fidelity(model, pulses, dim_cap=dim_cap).F4_min
        return exact_fidelity(model, pulses, dim_cap=dim_cap)

    def one(job):
        i, s = job
        m = model_family(axis[i], seeds[s])
        return evaluate(m, pulses_robust), evaluate(m, pulses_primitive)

    res = _map(one, jobs, workers)
    Fr = np.empty((len(axis), len(seeds)))
    Fp = np.empty_like(Fr)
    for (i, s), (r, p) in zip(jobs, res):
        Fr[i, s], Fp[i, s] = r, p
    return SweepResult(axis, Fr, Fp, seeds)


__all__ = [
    "exact_fidelity",
    "full_target",
    "full_propagator",
    "lattice_tiles",
    "block_fidelity",
    "BlockFidelityReport",
    "fit_decay",
    "DecayFit",
    "DecaySeries",
    "repeat_unitary",
    "repeat_gate",
    "SweepResult",
    "coupling_sweep",
]
