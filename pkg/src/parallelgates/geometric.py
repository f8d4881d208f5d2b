"""Analytic crosstalk-robust single-qubit pulses from geometric trajectories.

A single-qubit evolution is written ``U(t) = Rz(phi) Ry(theta) Rz(gamma)``.
For ZZ crosstalk between two such qubits the pair deviation only depends on
the Bloch paths ``r(t)`` of the Heisenberg-evolved ``sigma_z``, through the
nine cross integrals ``C_{mu nu} = \\int r_mu^k r_nu^j dt``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .core import ValidationError
from .pulses import PulseSequence

DEFAULT_POINTS = 1024
DEFAULT_SLICES = 512


class SynthesisError(ValidationError):
    """A trajectory cannot be mapped to a control field."""


def bessel_j0(x, terms: int = 40):
    """``J_0(x)`` from its power series (accurate for |x| <= ~10)."""
    x = np.asarray(x, dtype=float)
    q = -(x / 2) ** 2
    term = np.ones_like(x)
    total = np.ones_like(x)
    for m in range(1, terms):
        term = term * q / (m * m)
        total = total + term
    return total


def bessel_j0_first_zero(tol: float = 1e-13) -> float:
    """First positive root of ``J_0`` by bisection on [2, 3]."""
    lo, hi = 2.0, 3.0
    flo = bessel_j0(lo)
    if not (flo > 0 > bessel_j0(hi)):
        raise RuntimeError("J0 does not change sign on [2, 3]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if bessel_j0(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


BESSEL_ZERO = bessel_j0_first_zero()


@dataclass(frozen=True)
class GeometricTrajectory:
    t: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    gamma: np.ndarray
    beta: float = 0.0

    def __post_init__(self):
        n = len(self.t)
        if n < 3:
            raise ValidationError("a trajectory needs at least 3 samples")
        for name in ("theta", "phi", "gamma"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} has {len(getattr(self, name))} samples, t has {n}")

    @property
    def T(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def n_pts(self) -> int:
        return len(self.t)

    def max_jump(self) -> float:
        return float(max(np.abs(np.diff(a)).max() for a in (self.theta, self.phi, self.gamma)))

    @classmethod
    def ry(cls, t, theta) -> "GeometricTrajectory":
        z = np.zeros_like(np.asarray(theta, dtype=float))
        return cls(np.asarray(t, float), np.asarray(theta, float), z, z.copy())


@dataclass(frozen=True)
class BlochPath:
    r_x: np.ndarray
    r_y: np.ndarray
    r_z: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([self.r_x, self.r_y, self.r_z])

    def norm_error(self) -> float:
        return float(np.abs(self.r_x**2 + self.r_y**2 + self.r_z**2 - 1).max())


def ry_pi_trajectories(T: float, n_pts: int = DEFAULT_POINTS, A: float = BESSEL_ZERO):
    """The antisymmetric pair ``theta = pi t/T +- (A/2) sin(2 pi t/T)``.

    With ``A`` the first zero of ``J_0`` every cross integral vanishes, so
    the pair is first-order insensitive to ZZ coupling.
    """
    if not T > 0:
        raise ValidationError("T must be positive")
    if n_pts < 64:
        raise ValidationError("use at least 64 trajectory samples")
    t = np.linspace(0.0, T, n_pts)
    base = np.pi * t / T
    wobble = 0.5 * A * np.sin(2 * np.pi * t / T)
    th_k = base + wobble
    th_j = base - wobble
    th_k[0] = th_j[0] = 0.0
    th_k[-1] = th_j[-1] = np.pi
    return GeometricTrajectory.ry(t, th_k), GeometricTrajectory.ry(t, th_j)


def bloch_components(traj: GeometricTrajectory) -> BlochPath:
    s = np.sin(traj.theta)
    return BlochPath(
        r_x=-np.cos(traj.gamma) * s,
        r_y=np.sin(traj.gamma) * s,
        r_z=np.cos(traj.theta),
    )


def cross_integral_matrix(path_k: BlochPath, path_j: BlochPath, T: float) -> np.ndarray:
    """``C[mu, nu] = \\int_0^T r_mu^k r_nu^j dt`` by composite Simpson."""
    rk = path_k.as_array()
    rj = path_j.as_array()
    if rk.shape != rj.shape:
        raise ValidationError("Bloch paths must share a sampling grid")
    t = np.linspace(0.0, T, rk.shape[1])
    prod = rk[:, None, :] * rj[None, :, :]
    return simpson(prod, x=t, axis=-1)


def pair_norm_from_cross_integrals(C: np.ndarray, g: float) -> float:
    """``f_pair`` for ``g Z (x) Z`` crosstalk from the cross-integral matrix.

    The toggling-frame integral is ``g sum C_{mu nu} sigma_mu (x) sigma_nu``;
    each Pauli product has squared Frobenius norm 4 = d_pair, so
    ``||D||^2 / d_pair = g^2 sum C^2``.
    """
    return float(g**2 * np.sum(np.asarray(C) ** 2))


def _derivative(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    # central differences inside, second-order one-sided at the ends
    return np.gradient(y, t, edge_order=2)


def trajectory_to_pulse(traj: GeometricTrajectory, n_slices: int = DEFAULT_SLICES,
                        singular_tol: float = 1e-9) -> PulseSequence:
    """Quadrature amplitudes ``(x, y)`` that drive ``Rz(phi) Ry(theta) Rz(gamma)``.

    With ``H = (x sigma_x + y sigma_y)/2`` the Schrodinger equation fixes
    ``x = -theta' sin(phi) + gamma' sin(theta) cos(phi)`` and
    ``y = theta' cos(phi) + gamma' sin(theta) sin(phi)``, subject to
    ``phi' = -gamma' cos(theta)`` (no sigma_z control). For
    ``phi = gamma = 0`` this is ``y = theta'``.
    """
    t = traj.t
    dth = _derivative(traj.theta, t)
    dph = _derivative(traj.phi, t)
    dga = _derivative(traj.gamma, t)
    moving = (np.abs(dph) > 0) | (np.abs(dga) > 0)
    sin_th = np.sin(traj.theta)
    bad = np.flatnonzero((np.abs(sin_th[1:-1]) < singular_tol) & moving[1:-1])
    if bad.size:
        m = int(bad[0]) + 1
        raise SynthesisError(
            f"coordinate singularity at sample {m} (t={t[m]:.6g}): sin(theta)=0 while phi/gamma move"
        )
    resid = dph + dga * np.cos(traj.theta)
    scale = max(np.abs(dth).max(), np.abs(dga).max(), np.abs(dph).max(), 1e-300)
    if np.abs(resid).max() > 1e-4 * scale:
        raise SynthesisError("trajectory violates phi' = -gamma' cos(theta); it needs sigma_z control")

    T = traj.T
    tm = t[0] + (np.arange(n_slices) + 0.5) * T / n_slices
    th = np.interp(tm, t, traj.theta)
    ph = np.interp(tm, t, traj.phi)
    d_th = np.interp(tm, t, dth)
    d_ga = np.interp(tm, t, dga)
    x = -d_th * np.sin(ph) + d_ga * np.sin(th) * np.cos(ph)
    y = d_th * np.cos(ph) + d_ga * np.sin(th) * np.sin(ph)
    return PulseSequence(T, np.column_stack([x, y]), ("x", "y"))


def primitive_pulse(axis: str, angle: float, T: float, n_slices: int = DEFAULT_SLICES,
                    labels=("x", "y")) -> PulseSequence:
    """Constant resonant pulse rotating by ``angle`` about ``axis`` in time ``T``."""
    if axis not in ("x", "y"):
        raise ValidationError("primitive pulses rotate about x or y")
    amps = np.zeros((n_slices, 2))
    amps[:, 0 if axis == "x" else 1] = angle / T
    return PulseSequence(T, amps, tuple(labels))


def robust_ry_pi_pulses(T: float, n_slices: int = DEFAULT_SLICES, n_pts: int = DEFAULT_POINTS):
    """Pulse pair ``(u_k, u_j)`` realising the Bessel-zero trajectories."""
    tk, tj = ry_pi_trajectories(T, n_pts)
    return trajectory_to_pulse(tk, n_slices), trajectory_to_pulse(tj, n_slices)


def analytic_ry_pi_amplitude(t, T: float, sign: int = 1, A: float = BESSEL_ZERO):
    """``theta'`` of the robust trajectory: ``(pi/T) (1 +- A cos(2 pi t/T))``."""
    return np.pi / T * (1 + sign * A * np.cos(2 * np.pi * np.asarray(t) / T))


def chain_pulses(N: int, T: float, n_slices: int = DEFAULT_SLICES, robust: bool = True,
                 labels=("x", "y")) -> list[PulseSequence]:
    """Per-spin pulses for an N-spin chain.

    Robust: spins 1, 3, 5, ... (1-based) get ``u_k`` and spins 2, 4, ... get
    ``u_j``, so every neighbouring pair sees the (u_k, u_j) combination.
    Primitive: the same rectangular pi pulse on every spin.
    """
    if robust:
        uk, uj = robust_ry_pi_pulses(T, n_slices)
        uk = PulseSequence(T, uk.amplitudes, tuple(labels))
        uj = PulseSequence(T, uj.amplitudes, tuple(labels))
        return [uk if i % 2 == 0 else uj for i in range(N)]
    p = primitive_pulse("y", np.pi, T, n_slices, labels)
    return [p for _ in range(N)]
