"""Experiment configuration documents (JSON), validated before any computation."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .gates import GATE_NAMES


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NVChainPlatform(_Strict):
    kind: Literal["nv_chain"]
    N: int = Field(ge=2)
    gT_over_pi: float = Field(0.1, ge=0)        # operating point for decay and Dyson checks


class NMRPlatform(_Strict):
    kind: Literal["nmr"]
    omegas_hz: list[float]
    couplings_hz: list[list[float]]
    partition: list[list[int]]
    amplitude_bound_hz: float = Field(gt=0)
    spin_labels: Optional[list[str]] = None

    @model_validator(mode="after")
    def _shapes(self):
        n = len(self.omegas_hz)
        if len(self.couplings_hz) != n or any(len(r) != n for r in self.couplings_hz):
            raise ValueError(f"couplings_hz must be {n}x{n}")
        flat = sorted(i for b in self.partition for i in b)
        if flat != list(range(n)):
            raise ValueError("partition must cover every spin exactly once")
        return self


class TransmonPlatform(_Strict):
    kind: Literal["transmon_array"]
    q: int = Field(ge=1)
    design_g_max_hz: float = Field(gt=0)     # bound the robust pulses are optimised against
    seed: int = 0
    amplitude_bound_hz: float = Field(400e6, gt=0)


class PauliTerm(_Strict):
    pauli: str
    coeff: float
    bound: Optional[float] = None


class CustomChannel(_Strict):
    pauli: str
    bound: float = Field(gt=0)
    label: str


class CustomSubsystem(_Strict):
    n_qubits: int = Field(ge=1)
    drift: list[PauliTerm] = []
    channels: list[CustomChannel]


class CustomCrosstalk(_Strict):
    pair: tuple[int, int]
    terms: list[PauliTerm]


class CustomPlatform(_Strict):
    kind: Literal["custom"]
    subsystems: list[CustomSubsystem]
    crosstalk: list[CustomCrosstalk] = []


Platform = Annotated[
    Union[NVChainPlatform, NMRPlatform, TransmonPlatform, CustomPlatform],
    Field(discriminator="kind"),
]


class PulseSection(_Strict):
    T: float = Field(gt=0)
    n_slices: int = Field(ge=1)
    synthesis: Literal["geometric", "grape"] = "grape"
    trajectory_points: int = Field(1024, ge=64)


class OptimizerSection(_Strict):
    max_iters: int = Field(500, ge=1)
    max_stages: int = Field(12, ge=1)
    grad_tol: float = Field(1e-10, gt=0)
    objective_tol: float = Field(1e-13, gt=0)
    lambda_init: float = Field(1.0, gt=0)
    lambda_growth: float = Field(3.0, gt=1)
    lambda_max: float = Field(1e4, gt=0)
    pair_threshold: float = Field(1e-6, gt=0)
    history: int = Field(10, ge=1)
    armijo: float = Field(1e-4, gt=0, lt=1)
    backtrack: float = Field(0.5, gt=0, lt=1)
    max_backtracks: int = Field(40, ge=1)
    seed: int = 0
    init_perturbation: float = Field(1e-2, ge=0)
    init_scale: float = Field(0.3, gt=0)
    bound_mode: Literal["clip", "penalty"] = "clip"
    penalty_weight: float = Field(1e2, ge=0)
    smoothness: float = Field(0.0, ge=0)
    crosstalk_mode: Literal["total", "components_at_bound"] = "total"
    primitive_max_iters: Optional[int] = Field(None, ge=1)   # budget of the crosstalk-blind run
    tilewise: bool = False             # transmon arrays: optimise each 2x2 tile on its own


class EvalSection(_Strict):
    sweep: list[float] = []            # gT/pi (nv), J scale (nmr), g_max in Hz (transmon)
    M_values: list[int] = []
    seeds: list[int] = [0]
    block: bool = False
    block_g_max_hz: Optional[float] = None
    dim_cap: int = Field(2**12, ge=2)

    @model_validator(mode="after")
    def _positive_m(self):
        if any(m < 1 for m in self.M_values):
            raise ValueError("M_values must be positive")
        return self


class ExperimentConfig(_Strict):
    name: str
    description: str = ""
    platform: Platform
    targets: Union[str, list[str]]
    pulse: PulseSection
    optimizer: OptimizerSection = OptimizerSection()
    eval: EvalSection = EvalSection()
    output_dir: str = "out"

    @model_validator(mode="after")
    def _targets(self):
        names = [self.targets] if isinstance(self.targets, str) else self.targets
        for t in names:
            if t not in GATE_NAMES:
                raise ValueError(f"unknown target gate {t!r}; choose from {GATE_NAMES}")
        return self

    def target_list(self, L: int) -> list[str]:
        if isinstance(self.targets, str):
            return [self.targets] * L
        if len(self.targets) != L:
            raise ValueError(f"{len(self.targets)} targets for {L} subsystems")
        return list(self.targets)


def load_config(path) -> tuple[ExperimentConfig, str]:
    """Parse and validate a config file; returns the model and its sha256."""
    raw = Path(path).read_bytes()
    data = json.loads(raw)
    return ExperimentConfig.model_validate(data), hashlib.sha256(raw).hexdigest()
