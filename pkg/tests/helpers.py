"""Random instances shared by the test modules."""
import numpy as np

from parallelgates.core import random_hermitian, random_unitary
from parallelgates.gates import SX, SY, SZ, named_gate
from parallelgates.model import ControlChannel, CrosstalkTerm, SubsystemSpec, SystemModel
from parallelgates.pulses import PulseSequence


def random_pair_model(rng, dims=(2, 2), scale=1.0, n_channels=2, xt_scale=0.3):
    """Two subsystems with random drift, random Hermitian controls and crosstalk."""
    subs = []
    for k, d in enumerate(dims):
        nq = int(np.log2(d))
        chans = tuple(ControlChannel(random_hermitian(d, rng, 0.5), 2.0 * scale, f"c{k}{c}")
                      for c in range(n_channels))
        subs.append(SubsystemSpec(k, tuple(f"q{k}_{i}" for i in range(nq)),
                                  random_hermitian(d, rng, 0.5 * scale), chans,
                                  random_unitary(d, rng)))
    dp = dims[0] * dims[1]
    xt = CrosstalkTerm((0, 1), (random_hermitian(dp, rng, xt_scale * scale),), (1.0,), (1.0,))
    return SystemModel(tuple(subs), (xt,), "custom")


def random_pulses(model, rng, n_slices, T=1.0, frac=0.8):
    return [PulseSequence(T, rng.uniform(-frac, frac, (n_slices, len(s.channels))) * s.bounds[None, :],
                          tuple(c.label for c in s.channels))
            for s in model.subsystems]


def single_qubit_model(target="rx_half_pi", bound=4 * np.pi):
    chans = (ControlChannel(SX / 2, bound, "x"), ControlChannel(SY / 2, bound, "y"))
    s = SubsystemSpec(0, ("a",), np.zeros((2, 2), complex), chans, named_gate(target, 1))
    return SystemModel((s,), (), "custom")


def zz_pair_model(g, bound=4 * np.pi, drift=0.0):
    subs = []
    for k in range(2):
        chans = (ControlChannel(SX / 2, bound, f"x{k}"), ControlChannel(SY / 2, bound, f"y{k}"))
        subs.append(SubsystemSpec(k, (f"e{k}",), drift * SZ / 2, chans, named_gate("ry_pi", 1)))
    xt = CrosstalkTerm((0, 1), (np.kron(SZ, SZ),), (float(g),), (abs(g),))
    return SystemModel(tuple(subs), (xt,), "custom")


def unit_rotation_T(model, frac=0.8):
    """Duration giving total rotation ~1 rad: the regime of the package's pulses."""
    norm = 0.0
    for s in model.subsystems:
        norm += np.linalg.norm(s.drift, 2) + frac * sum(c.amplitude_bound * np.linalg.norm(c.generator, 2)
                                                       for c in s.channels)
    return 1.0 / norm


CRITERIA: dict = {}


class criterion:
    """Record and print one pass/fail line for an acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def note(self, text: str) -> None:
        self.detail = text

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"criterion {self.number:2d} {status}: {self.title}"
        if self.detail:
            line += f" ({self.detail})"
        CRITERIA[self.number] = line
        print(line)
        return False
