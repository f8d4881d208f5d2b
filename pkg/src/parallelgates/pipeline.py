"""Config-driven studies: build the model, synthesise pulses, evaluate, write artifacts."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .core import ValidationError, tensor
from .deviation import dyson_fidelity, model_deviations
from .evaluator import (
    block_fidelity,
    coupling_sweep,
    exact_fidelity,
    lattice_tiles,
    repeat_gate,
)
from .gates import I2, PAULIS
from .geometric import chain_pulses
from .grape import OptimizerConfig, optimize, perturb, subsystem_fidelity
from .model import (
    TWO_PI,
    ControlChannel,
    CrosstalkTerm,
    SubsystemSpec,
    SystemModel,
    build_nmr,
    build_nv_chain,
    build_transmon_array,
    resample_transmon_crosstalk,
    sample_transmon_params,
)
from .pulses import fmt

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIM_CAP = 3
EXIT_NOT_CONVERGED = 4


class DimensionCapError(ValidationError):
    """Full-space evaluation would exceed the dimension cap and block mode is off."""


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------

def _pauli_string(s: str) -> np.ndarray:
    s = s.lower()
    ops = {"i": I2, **PAULIS}
    try:
        return tensor(*[ops[c] for c in s])
    except KeyError as exc:
        raise ValidationError(f"bad Pauli string {s!r}") from exc


def _custom_model(cfg: ExperimentConfig) -> SystemModel:
    from .gates import named_gate

    plat = cfg.platform
    names = cfg.target_list(len(plat.subsystems))
    subs, lab = [], 0
    for k, (s, tname) in enumerate(zip(plat.subsystems, names)):
        d = 2**s.n_qubits
        drift = np.zeros((d, d), complex)
        for term in s.drift:
            if len(term.pauli) != s.n_qubits:
                raise ValidationError(f"subsystem {k}: Pauli string {term.pauli!r} has wrong length")
            drift += term.coeff * _pauli_string(term.pauli)
        chans = tuple(ControlChannel(_pauli_string(c.pauli) / 2, c.bound, c.label) for c in s.channels)
        subs.append(SubsystemSpec(k, tuple(f"q{lab + i}" for i in range(s.n_qubits)), drift, chans,
                                  named_gate(tname, s.n_qubits)))
        lab += s.n_qubits
    terms = []
    for c in plat.crosstalk:
        structs = tuple(_pauli_string(t.pauli) for t in c.terms)
        strengths = tuple(t.coeff for t in c.terms)
        bounds = tuple(t.bound if t.bound is not None else abs(t.coeff) for t in c.terms)
        terms.append(CrosstalkTerm(tuple(c.pair), structs, strengths, bounds))
    return SystemModel(tuple(subs), tuple(terms), "custom")


def build_model(cfg: ExperimentConfig, seed_override: int | None = None) -> SystemModel:
    plat = cfg.platform
    if plat.kind == "nv_chain":
        T = cfg.pulse.T
        g = plat.gT_over_pi * np.pi / T
        return build_nv_chain(plat.N, g, T=T, target=cfg.target_list(plat.N)[0])
    if plat.kind == "nmr":
        return build_nmr(plat.omegas_hz, plat.couplings_hz, plat.partition,
                         TWO_PI * plat.amplitude_bound_hz,
                         targets=cfg.target_list(len(plat.partition)), spin_labels=plat.spin_labels)
    if plat.kind == "transmon_array":
        seed = plat.seed if seed_override is None else seed_override
        params = sample_transmon_params(plat.q, TWO_PI * plat.design_g_max_hz, seed,
                                        amplitude_bound=TWO_PI * plat.amplitude_bound_hz)
        return build_transmon_array(params, target=cfg.target_list(plat.q**2)[0])
    return _custom_model(cfg)


def _uses_blocks(cfg: ExperimentConfig) -> bool:
    return cfg.platform.kind == "transmon_array" and cfg.eval.block


def resource_estimate(cfg: ExperimentConfig, model: SystemModel) -> dict:
    d = model.full_dim
    est = {
        "platform": cfg.platform.kind,
        "subsystems": model.L,
        "qubits": model.n_qubits,
        "subsystem_dims": sorted(set(model.dims)),
        "full_dim": d if d < 2**63 else f"2^{model.n_qubits}",
        "pairs": len(model.crosstalk),
        "n_slices": cfg.pulse.n_slices,
        "dim_cap": cfg.eval.dim_cap,
        "block_mode": _uses_blocks(cfg),
        "warnings": [],
    }
    if _uses_blocks(cfg):
        tiles = lattice_tiles(cfg.platform.q)
        est["blocks"] = len(tiles)
        est["tile_dim"] = max(int(np.prod([model.dims[i] for i in t])) for t in tiles)
    elif d > cfg.eval.dim_cap:
        est["warnings"].append(f"full-space dim {d} exceeds cap {cfg.eval.dim_cap}")
    elif d >= 2**12:
        est["warnings"].append(f"full-space evaluation dim {d}")
    return est


def check_caps(cfg: ExperimentConfig, model: SystemModel) -> None:
    if _uses_blocks(cfg):
        tiles = lattice_tiles(cfg.platform.q)
        worst = max(int(np.prod([model.dims[i] for i in t])) for t in tiles)
        if worst > cfg.eval.dim_cap:
            raise DimensionCapError(f"tile dim {worst} exceeds cap {cfg.eval.dim_cap}")
        return
    if model.full_dim > cfg.eval.dim_cap:
        raise DimensionCapError(
            f"full-space dim {model.full_dim} exceeds cap {cfg.eval.dim_cap} and block mode is off"
        )


# ---------------------------------------------------------------------------
# pulse synthesis
# ---------------------------------------------------------------------------

def optimizer_config(cfg: ExperimentConfig, seed_override: int | None = None, **changes) -> OptimizerConfig:
    data = cfg.optimizer.model_dump()
    data.pop("primitive_max_iters")
    data.pop("tilewise")
    if seed_override is not None:
        data["seed"] = seed_override
    data.update(changes)
    return OptimizerConfig(**data)


@dataclass
class Synthesis:
    robust: list
    primitive: list
    converged: bool = True
    notes: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)


def synthesize(cfg: ExperimentConfig, model: SystemModel, seed_override=None, workers: int = 1) -> Synthesis:
    T, n = cfg.pulse.T, cfg.pulse.n_slices
    if cfg.platform.kind == "nv_chain" and cfg.pulse.synthesis == "geometric":
        if any(t != "ry_pi" for t in cfg.target_list(model.L)):
            raise ValidationError("geometric synthesis covers the ry_pi family only")
        rob = chain_pulses(model.L, T, n, robust=True)
        prim = chain_pulses(model.L, T, n, robust=False)
        return Synthesis(rob, prim, True, {"method": "geometric"})
    ocfg = optimizer_config(cfg, seed_override)
    blind_iters = cfg.optimizer.primitive_max_iters or ocfg.max_iters
    if cfg.optimizer.tilewise:
        if cfg.platform.kind != "transmon_array":
            raise ValidationError("tilewise optimisation needs a transmon array")
        groups = lattice_tiles(cfg.platform.q)
    else:
        groups = [list(range(model.L))]
    rob_p, prim_p = [None] * model.L, [None] * model.L
    converged = True
    tile_notes, traces = [], {"robust": [], "primitive": []}
    for i, group in enumerate(groups):
        sub = model.restrict(group) if len(groups) > 1 else model
        prim = optimize(sub, config=replace(ocfg, max_iters=blind_iters), n_slices=n, T=T,
                        lambdas=0, workers=workers)
        if sub.crosstalk:
            start = perturb(prim.pulses, ocfg.init_perturbation, ocfg.seed)
            rob = optimize(sub, config=ocfg, init=start, workers=workers)
        else:
            rob = prim
        for k, pr, ro in zip(group, prim.pulses, rob.pulses):
            prim_p[k], rob_p[k] = pr, ro
        converged &= rob.converged
        tile_notes.append({
            "subsystems": group,
            "primitive": {"status": prim.status, "f0": prim.report.f0, "iterations": prim.report.iteration},
            "robust": {"status": rob.status, "f0": rob.report.f0, "iterations": rob.report.iteration,
                       "max_f_pair": rob.report.max_pair, "lambdas": list(rob.report.lambdas),
                       "converged": rob.converged},
        })
        for label, res in (("robust", rob), ("primitive", prim)):
            traces[label].append((i, res.trace_csv()))
    if len(groups) == 1:
        notes = {"method": "grape", **{k: v for k, v in tile_notes[0].items() if k != "subsystems"}}
        texts = {label: t[0][1] for label, t in traces.items()}
    else:
        notes = {"method": "grape_tilewise", "tiles": tile_notes}
        texts = {label: _tile_traces(t) for label, t in traces.items()}
    return Synthesis(rob_p, prim_p, bool(converged), notes, texts)


def _tile_traces(traces) -> str:
    # one table for all tiles; lambda columns differ per tile, so keep the common ones
    lines = []
    for i, text in traces:
        rows = text.splitlines()
        if not lines:
            lines.append("tile," + ",".join(rows[0].split(",")[:5]))
        lines += [f"{i}," + ",".join(r.split(",")[:5]) for r in rows[1:]]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(x if isinstance(x, str) else fmt(x) for x in r))
    return "\n".join(lines) + "\n"


def evaluate(cfg: ExperimentConfig, model: SystemModel, syn: Synthesis, workers: int = 1) -> dict:
    """Returns ``{"csv": {name: text}, "summary": {...}, "objects": {...}}``."""
    ev = cfg.eval
    out_csv, summ, objs = {}, {}, {}
    kind = cfg.platform.kind
    rob, prim = syn.robust, syn.primitive
    cap = ev.dim_cap

    if kind == "nv_chain":
        T = cfg.pulse.T
        N = model.L

        def family(x, _seed):
            return build_nv_chain(N, x * np.pi / T, T=T, target=cfg.target_list(N)[0])

        axis_label = "gT_over_pi"
    elif kind == "transmon_array":
        def family(x, seed):
            return resample_transmon_crosstalk(model, TWO_PI * x, np.random.default_rng(seed))

        axis_label = "g_max_hz"
    else:
        def family(x, _seed):
            return model.scale_crosstalk(x)

        axis_label = "crosstalk_scale"

    mode = "block" if _uses_blocks(cfg) else "exact"
    if not _uses_blocks(cfg):
        summ["F_robust"] = exact_fidelity(model, rob, dim_cap=cap)
        summ["F_primitive"] = exact_fidelity(model, prim, dim_cap=cap)
    summ["f_sub_robust"] = [subsystem_fidelity(s, p) for s, p in zip(model.subsystems, rob)]
    summ["f_sub_primitive"] = [subsystem_fidelity(s, p) for s, p in zip(model.subsystems, prim)]

    if ev.sweep:
        seeds = ev.seeds if kind == "transmon_array" else [0]
        sw = coupling_sweep(family, rob, prim, ev.sweep, seeds, mode=mode, workers=workers, dim_cap=cap)
        out_csv["sweep.csv"] = sw.to_csv(axis_label)
        objs["sweep"] = (sw, axis_label)
        summ["sweep"] = {
            "axis": axis_label,
            "mode": mode,
            "seeds": list(seeds),
            "robust_min": float(sw.F_robust.min()),
            "primitive_min": float(sw.F_primitive.min()),
            "robust_ge_primitive_everywhere": bool(np.all(sw.F_robust.mean(1) >= sw.F_primitive.mean(1))),
            "max_robust_spread": float(sw.robust_spread.max()),
            "max_primitive_spread": float(sw.primitive_spread.max()),
        }

    if ev.M_values and not _uses_blocks(cfg):
        dr = repeat_gate(model, rob, ev.M_values, dim_cap=cap)
        dp = repeat_gate(model, prim, ev.M_values, dim_cap=cap)
        rows = [(m, fr, fp) for m, fr, fp in zip(dr.M_values, dr.F_values, dp.F_values)]
        out_csv["decay.csv"] = _csv(["M", "F_robust", "F_primitive"], rows)
        objs["decay"] = {"robust": dr, "primitive": dp}
        summ["decay"] = {
            label: {"eps_lin": s.fit.eps_lin, "eps_exp": s.fit.eps_exp, "res_lin": s.fit.res_lin,
                    "res_exp": s.fit.res_exp, "monotonicity_violations": list(s.violations)}
            for label, s in (("robust", dr), ("primitive", dp))
        }
        if dr.fit.eps_exp > 0:
            summ["decay"]["rate_ratio"] = dp.fit.eps_exp / dr.fit.eps_exp

    if kind == "nv_chain" and not _uses_blocks(cfg):
        rows = []
        for x in ev.sweep:
            m = family(x, 0)
            for label, ps in (("robust", rob), ("primitive", prim)):
                F = exact_fidelity(m, ps, dim_cap=cap)
                fs = [subsystem_fidelity(s, p) for s, p in zip(m.subsystems, ps)]
                dy = dyson_fidelity(m, model_deviations(m, ps, workers=workers), fs)
                rows.append((x, label, F, dy, abs(F - dy)))
        if rows:
            out_csv["dyson.csv"] = _csv(["gT_over_pi", "pulse", "F_exact", "F_dyson", "abs_diff"], rows)

    if _uses_blocks(cfg):
        g = ev.block_g_max_hz if ev.block_g_max_hz is not None else cfg.platform.design_g_max_hz
        m = family(g, ev.seeds[0])
        br = block_fidelity(m, rob, workers=workers, dim_cap=cap)
        bp = block_fidelity(m, prim, workers=workers, dim_cap=cap)
        rows = [(i, "-".join(str(k) for k in t), fr, fp)
                for i, (t, fr, fp) in enumerate(zip(br.tiles, br.fidelities, bp.fidelities))]
        out_csv["block.csv"] = _csv(["tile", "subsystems", "F_robust", "F_primitive"], rows)
        objs["block"] = {"robust": br, "primitive": bp}
        summ["block"] = {"g_max_hz": g, "n_blocks": br.n_blocks,
                         "F4_min_robust": br.F4_min, "F4_mean_robust": br.F4_mean,
                         "F4_min_primitive": bp.F4_min, "F4_mean_primitive": bp.F4_mean}
    return {"csv": out_csv, "summary": summ, "objects": objs}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    summary: dict


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_figures(out: Path, syn: Synthesis, objs: dict, model: SystemModel, cfg) -> list[Path]:
    from . import plotting

    files = []
    if "sweep" in objs:
        sw, label = objs["sweep"]
        files.append(plotting.plot_sweep(sw, out / "sweep.png", xlabel=label))
    if "decay" in objs:
        files.append(plotting.plot_decay(objs["decay"], out / "decay.png"))
    if "block" in objs:
        files.append(plotting.plot_blocks(objs["block"], out / "block.png"))
    shown = syn.robust[: min(4, len(syn.robust))]
    files.append(plotting.plot_pulses(shown, out / "pulses_robust.png"))
    return files


def run_pipeline(cfg: ExperimentConfig, config_hash: str, out_dir=None, workers: int = 1,
                 seed_override: int | None = None, plots: bool = True) -> RunResult:
    """Execute one study. Raises :class:`DimensionCapError` before writing anything."""
    timings = {}
    t0 = time.perf_counter()
    model = build_model(cfg, seed_override)
    check_caps(cfg, model)
    timings["build"] = time.perf_counter() - t0

    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    t0 = time.perf_counter()
    syn = synthesize(cfg, model, seed_override, workers)
    timings["synthesize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ev = evaluate(cfg, model, syn, workers)
    timings["evaluate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    (out / "pulses").mkdir(exist_ok=True)
    written = []
    for label, ps in (("robust", syn.robust), ("primitive", syn.primitive)):
        for k, p in enumerate(ps):
            written.append(p.write_csv(out / "pulses" / f"{label}_S{k + 1}.csv"))
    for name, text in ev["csv"].items():
        path = out / name
        path.write_text(text)
        written.append(path)
    for label, text in syn.traces.items():
        path = out / f"trace_{label}.csv"
        path.write_text(text)
        written.append(path)
    if plots:
        written += _write_figures(out, syn, ev["objects"], model, cfg)
    timings["write"] = time.perf_counter() - t0

    summary = {
        "name": cfg.name,
        "platform": cfg.platform.kind,
        "version": __version__,
        "config_sha256": config_hash,
        "seed_override": seed_override,
        "subsystems": model.L,
        "qubits": model.n_qubits,
        "crosstalk_pairs": len(model.crosstalk),
        "n_slices": cfg.pulse.n_slices,
        "T": cfg.pulse.T,
        "converged": syn.converged,
        "synthesis": syn.notes,
        "results": ev["summary"],
        "timings_s": timings,
        "manifest": {str(p.relative_to(out)): _sha256(p) for p in written},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float) + "\n")
    code = EXIT_OK if syn.converged else EXIT_NOT_CONVERGED
    return RunResult(code, out, summary)
