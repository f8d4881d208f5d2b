"""Piecewise-constant pulse sequences and their CSV exchange format.

CSV layout (one file per subsystem)::

    slice_index,t_start_s,<label_1>,...,<label_c>
    0,0,1.23e+06,...

Amplitudes are in rad/s, numbers written with 12 significant digits.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ValidationError

NUMBER_FORMAT = "{:.12g}"


def fmt(x) -> str:
    return NUMBER_FORMAT.format(float(x))


@dataclass(frozen=True)
class PulseSequence:
    T: float
    amplitudes: np.ndarray          # (n_slices, n_channels), rad/s
    labels: tuple = field(default=())

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValidationError(f"amplitudes must be (n_slices, n_channels), got {a.shape}")
        if not self.T > 0:
            raise ValidationError("pulse duration must be positive")
        labels = tuple(self.labels) or tuple(f"ch{c}" for c in range(a.shape[1]))
        if len(labels) != a.shape[1]:
            raise ValidationError("one label per channel is required")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "labels", labels)

    @property
    def n_slices(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def n_channels(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def dt(self) -> float:
        return self.T / self.n_slices

    @property
    def t_start(self) -> np.ndarray:
        return np.arange(self.n_slices) * self.dt

    @classmethod
    def zeros(cls, n_slices: int, T: float, labels) -> "PulseSequence":
        return cls(T, np.zeros((n_slices, len(labels))), tuple(labels))

    def check_bounds(self, bounds) -> None:
        bounds = np.asarray(bounds, dtype=float)
        excess = np.abs(self.amplitudes) - bounds[None, :]
        if np.any(excess > 1e-9 * bounds[None, :]):
            c = int(np.argmax(excess.max(axis=0)))
            raise ValidationError(f"channel {self.labels[c]!r} exceeds its amplitude bound")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slice_index", "t_start_s", *self.labels])
        for m in range(self.n_slices):
            w.writerow([m, fmt(m * self.dt), *(fmt(a) for a in self.amplitudes[m])])
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path

    @classmethod
    def from_csv(cls, text: str, T: float | None = None) -> "PulseSequence":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if header[:2] != ["slice_index", "t_start_s"]:
            raise ValidationError("pulse CSV must start with slice_index,t_start_s")
        data = np.array([[float(x) for x in r] for r in body])
        if T is None:
            dt = data[1, 1] - data[0, 1] if len(data) > 1 else None
            if dt is None:
                raise ValidationError("single-slice CSV needs an explicit T")
            T = dt * len(data)
        return cls(T, data[:, 2:], tuple(header[2:]))

    @classmethod
    def read_csv(cls, path, T: float | None = None) -> "PulseSequence":
        return cls.from_csv(Path(path).read_text(), T)
