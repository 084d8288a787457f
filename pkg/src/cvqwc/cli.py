"""Declarative experiment runner.

Usage: ``cvqwc run CONFIG.json [--output DIR] [--threads N] [--seed S]``.

A run writes one CSV row per sweep point and a ``<csv>.manifest.json``
next to it.  Exit codes: 0 success, 1 a numerical-adequacy guard failed,
2 the configuration was rejected (no output is written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import jsonschema
import numpy as np

from .bandwidth import FrequencyMap, QubitSpectrum, SqueezingSpectrum, effective_fidelity
from .channels import LossParams, PipelineSpec, StageSpec, run_pipeline
from .fock import FockError, fidelity, trace_distance
from .sources import (
    InputQubit,
    SourceParams,
    apply_waveplates,
    make_fwm_source,
    make_tmsv_pair,
)
from .teleport import (
    BetaGrid,
    GainRule,
    NumericalGuardError,
    qubit_metrics,
    teleport_average,
    teleport_mc,
)

SCHEMA_VERSION = 1
ADEQUACY = ["captured_grid_mass", "truncation_leakage"]

COLUMNS = {
    "fidelity_sweep": ["r", "gain_kind", "g", "fidelity", "conditional_fidelity",
                       "one_photon_weight", "vacuum_weight", "multi_photon_weight", *ADEQUACY],
    "gain_sweep": ["r", "gain_kind", "g", "fidelity", "conditional_fidelity",
                   "one_photon_weight", "vacuum_weight", "multi_photon_weight", *ADEQUACY],
    "phase_error": ["r", "phi", "gain_kind", "g", "measured_phase", "fidelity",
                    "fidelity_rotated_input", "conditional_fidelity_rotated_input",
                    "one_photon_weight", "bloch_x", "bloch_y", "bloch_z", *ADEQUACY],
    "mc_vs_analytic": ["r", "gain_kind", "g", "shots", "seed", "trace_distance",
                       "trace_distance_se", "fidelity", "analytic_fidelity",
                       "one_photon_weight", *ADEQUACY],
    "fwm_equivalence": ["r", "s", "cutoff", "fidelity", "one_photon_weight", *ADEQUACY],
    "bandwidth": ["r0", "gamma", "sigma", "n_bins", "gain_kind", "fidelity",
                  "one_photon_weight", *ADEQUACY],
    "network": ["kind", "eta", "r1", "g1", "r2", "g2", "fidelity", "conditional_fidelity",
                "one_photon_weight", *ADEQUACY],
}


class ConfigError(Exception):
    """The configuration is unreadable, schema-invalid or semantically invalid."""


def artifact_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def load_schema() -> dict:
    return json.loads(resources.files("cvqwc").joinpath("config_schema.json").read_text())


def _line_of(text: str, path, extra_key: str | None = None) -> int:
    """Best-effort 1-based line of the JSON element at ``path`` in ``text``."""
    pos = 0
    keys = [p for p in path if isinstance(p, str)]
    if extra_key:
        keys.append(extra_key)
    for key in keys:
        m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def parse_config(text: str) -> dict:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.path), list(map(str, e.path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        extra = None
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            allowed = set(err.schema.get("properties", {}))
            unknown = sorted(set(err.instance) - allowed)
            extra = unknown[0] if unknown else None
        where = "/".join(map(str, err.path)) or "<root>"
        raise ConfigError(f"line {_line_of(text, err.path, extra)}: {where}: {err.message}")
    return cfg


# ---------------------------------------------------------------------------
# Config -> domain objects
# ---------------------------------------------------------------------------


def _complex(v) -> complex:
    return complex(v[0], v[1]) if isinstance(v, list) else complex(v)


def _input(p: dict) -> InputQubit:
    spec = p.get("input", {"c1": 1.0, "c2": 0.0})
    return InputQubit(_complex(spec["c1"]), _complex(spec["c2"]))


def _gain(spec: dict | None) -> GainRule:
    spec = spec or {"kind": "unit"}
    return GainRule(spec["kind"], float(spec.get("value", 1.0)))


def _grid(spec: dict | None) -> BetaGrid | None:
    return None if spec is None else BetaGrid(spec["half_width"], spec["points_per_axis"])


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return f"{x:.12g}"
    return "" if x is None else str(x)


@dataclass
class Point:
    """One sweep point: a closure plus the parameters that identify it."""

    fn: object
    cutoff: int | None = None

    def __call__(self):
        start = time.perf_counter()
        row = self.fn()
        return row, time.perf_counter() - start


def _guard_leakage(leak: float, limit: float):
    if leak > limit:
        raise NumericalGuardError("leakage", f"truncation leakage {leak:.3e} exceeds {limit:.1e}; "
                                             "raise the cutoff")


def _teleport_row(r, gain, inp, p, extra=None):
    res = teleport_average(inp, SourceParams(r), gain, _grid(p.get("grid")), cutoff=p.get("cutoff"),
                           output_cutoff=p.get("output_cutoff", 4), min_mass=p.get("min_mass", 0.99))
    _guard_leakage(res.source_leakage, p.get("max_leakage", 1e-6))
    m = qubit_metrics(res.rho, inp)
    row = {"r": r, "gain_kind": gain.kind.value, "g": res.gain, "fidelity": m.fidelity,
           "conditional_fidelity": m.conditional_fidelity, "one_photon_weight": m.one_photon_weight,
           "vacuum_weight": m.vacuum_weight, "multi_photon_weight": m.multi_photon_weight,
           "captured_grid_mass": res.captured_mass, "truncation_leakage": res.source_leakage,
           "cutoff": res.cutoff}
    row.update(extra or {})
    return row


def _phase_row(r, phi, gain, inp, p):
    res = teleport_average(inp, SourceParams(r, phi_A=phi), gain, _grid(p.get("grid")),
                           cutoff=p.get("cutoff"), output_cutoff=p.get("output_cutoff", 4),
                           track_source_phase=p.get("track_source_phase", True),
                           min_mass=p.get("min_mass", 0.99))
    _guard_leakage(res.source_leakage, p.get("max_leakage", 1e-6))
    m = qubit_metrics(res.rho, inp)
    rotated = InputQubit(inp.c1, inp.c2 * complex(np.exp(1j * phi)))
    mr = qubit_metrics(res.rho, rotated)
    b_in, b_out = inp.bloch_vector(), m.bloch_vector
    measured = math.atan2(b_out[1], b_out[0]) - math.atan2(b_in[1], b_in[0])
    measured = (measured + math.pi) % (2 * math.pi) - math.pi
    return {"r": r, "phi": phi, "gain_kind": gain.kind.value, "g": res.gain,
            "measured_phase": measured, "fidelity": m.fidelity,
            "fidelity_rotated_input": mr.fidelity,
            "conditional_fidelity_rotated_input": mr.conditional_fidelity,
            "one_photon_weight": m.one_photon_weight, "bloch_x": b_out[0], "bloch_y": b_out[1],
            "bloch_z": b_out[2], "captured_grid_mass": res.captured_mass,
            "truncation_leakage": res.source_leakage, "cutoff": res.cutoff}


def _mc_row(r, gain, inp, p, seed):
    kw = dict(cutoff=p.get("cutoff"), output_cutoff=p.get("output_cutoff", 4),
              min_mass=p.get("min_mass", 0.99))
    params = SourceParams(r)
    avg = teleport_average(inp, params, gain, _grid(p.get("grid")), **kw)
    _guard_leakage(avg.source_leakage, p.get("max_leakage", 1e-6))
    mc = teleport_mc(inp, params, gain, avg.grid, shots=p["shots"], seed=seed, **kw)
    ref = avg.rho.normalized()
    m = qubit_metrics(mc.rho, inp)
    return {"r": r, "gain_kind": gain.kind.value, "g": avg.gain, "shots": p["shots"], "seed": seed,
            "trace_distance": trace_distance(mc.rho, ref), "trace_distance_se": mc.trace_distance_se,
            "fidelity": m.fidelity, "analytic_fidelity": qubit_metrics(ref, inp).fidelity,
            "one_photon_weight": m.one_photon_weight, "captured_grid_mass": mc.grid_mass,
            "truncation_leakage": avg.source_leakage, "cutoff": avg.cutoff}


def _fwm_row(r, s, p):
    cutoff = p["cutoff"]
    fwm = apply_waveplates(make_fwm_source(SourceParams(r, s_coefficient=s), cutoff))
    ref = make_tmsv_pair(SourceParams(r), cutoff)
    leak = max(fwm.leakage, ref.leakage)
    _guard_leakage(leak, p.get("max_leakage", 1e-6))
    return {"r": r, "s": s, "cutoff": cutoff, "fidelity": fidelity(fwm, ref),
            "one_photon_weight": None, "captured_grid_mass": None, "truncation_leakage": leak}


def _bandwidth_row(gamma, p):
    shape = p.get("squeezing_shape", "lorentzian")
    table = p.get("squeezing_table") if shape == "table" else None
    sspec = SqueezingSpectrum(p["r0"], gamma, shape, table)
    fm = p["frequency_map"]
    fmap = FrequencyMap(fm.get("omega_A", 0.0), fm.get("omega_B", 0.0), fm["bin_width"], fm["n_bins"])
    q = p["qubit"]
    qspec = QubitSpectrum(q.get("center_offset", 0.0), q["sigma"])
    gain = _gain(p.get("gain"))
    res = effective_fidelity(qspec, sspec, gain, _input(p), _grid(p.get("grid")), fmap,
                             cutoff=p.get("cutoff"), output_cutoff=p.get("output_cutoff", 4))
    _guard_leakage(res.source_leakage, p.get("max_leakage", 1e-6))
    if res.captured_mass < p.get("min_mass", 0.99):
        raise NumericalGuardError("grid_mass", f"bin grid mass {res.captured_mass:.6f} too low")
    return {"r0": p["r0"], "gamma": gamma, "sigma": q["sigma"], "n_bins": fm["n_bins"],
            "gain_kind": gain.kind.value, "fidelity": res.value,
            "one_photon_weight": res.one_photon_weight,
            "captured_grid_mass": res.captured_mass, "truncation_leakage": res.source_leakage}


def _stage(spec: dict) -> StageSpec:
    return StageSpec(SourceParams(spec["r"]), _gain(spec.get("gain")), spec.get("cutoff"))


def _network_row(eta, p):
    s1, s2 = _stage(p["stage1"]), _stage(p["stage2"])
    spec = PipelineSpec(p["kind"], s1, s2, LossParams(eta), _input(p), _grid(p.get("grid")),
                        p.get("intermediate_cutoff", 6), p.get("output_cutoff", 4))
    res = run_pipeline(spec)
    _guard_leakage(res.source_leakage, p.get("max_leakage", 1e-6))
    return {"kind": p["kind"], "eta": eta, "r1": s1.source.r, "g1": s1.gain.resolve(s1.source.r),
            "r2": s2.source.r, "g2": s2.gain.resolve(s2.source.r),
            "fidelity": res.end_to_end_fidelity, "conditional_fidelity": res.conditional_fidelity,
            "one_photon_weight": res.one_photon_weight, "captured_grid_mass": res.captured_mass,
            "truncation_leakage": res.source_leakage}


def build_points(cfg: dict, seed: int) -> list[Point]:
    """Validate semantics and return the sweep points; raises ConfigError."""
    exp, p = cfg["experiment"], cfg["parameters"]
    try:
        if exp == "fwm_equivalence":
            return [Point(lambda r=r, s=s: _fwm_row(r, s, p), p["cutoff"])
                    for r in p["r"] for s in p.get("s", [1.0])]
        if exp == "network":
            for eta in p["eta"]:
                PipelineSpec(p["kind"], _stage(p["stage1"]), _stage(p["stage2"]), LossParams(eta),
                             _input(p), _grid(p.get("grid")))
            return [Point(lambda e=eta: _network_row(e, p)) for eta in p["eta"]]
        inp = _input(p)
        _grid(p.get("grid"))
        if exp == "fidelity_sweep":
            gain = _gain(p.get("gain"))
            return [Point(lambda r=r: _teleport_row(r, gain, inp, p), p.get("cutoff")) for r in p["r"]]
        if exp == "gain_sweep":
            gains = [_gain(g) for g in p["gains"]]
            return [Point(lambda g=g: _teleport_row(p["r"], g, inp, p), p.get("cutoff")) for g in gains]
        if exp == "phase_error":
            gain = _gain(p.get("gain"))
            return [Point(lambda f=f: _phase_row(p["r"], f, gain, inp, p), p.get("cutoff"))
                    for f in p["phi"]]
        if exp == "mc_vs_analytic":
            gain = _gain(p.get("gain"))
            return [Point(lambda r=r: _mc_row(r, gain, inp, p, seed), p.get("cutoff")) for r in p["r"]]
        if exp == "bandwidth":
            fm = p["frequency_map"]
            fmap = FrequencyMap(fm.get("omega_A", 0.0), fm.get("omega_B", 0.0), fm["bin_width"],
                                fm["n_bins"])
            qspec = QubitSpectrum(p["qubit"].get("center_offset", 0.0), p["qubit"]["sigma"])
            outside = 1.0 - float(qspec.bin_masses(fmap).sum())
            if outside > 1e-3:
                raise ValueError(f"qubit spectrum has mass {outside:.3e} outside the frequency map")
            shape = p.get("squeezing_shape", "lorentzian")
            for g in p["gamma"]:
                SqueezingSpectrum(p["r0"], g, shape, p.get("squeezing_table") if shape == "table" else None)
            return [Point(lambda g=g: _bandwidth_row(g, p), p.get("cutoff")) for g in p["gamma"]]
    except (ValueError, FockError, KeyError) as exc:
        raise ConfigError(f"parameters: {exc}") from None
    raise ConfigError(f"unknown experiment {exp!r}")


def render_csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def run(config_path: str, output_dir: str | None = None, threads: int | None = None,
        seed: int | None = None, stderr=None) -> int:
    stderr = stderr or sys.stderr
    try:
        text = Path(config_path).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"config error: cannot read {config_path}: {exc.strerror}", file=stderr)
        return 2
    try:
        cfg = parse_config(text)
        seed = cfg.get("seed", 0) if seed is None else seed
        threads = cfg.get("threads", 1) if threads is None else threads
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        points = build_points(cfg, seed)
    except ConfigError as exc:
        print(f"config error: {config_path}: {exc}", file=stderr)
        return 2
    out = Path(cfg["output_path"])
    if output_dir is not None:
        out = Path(output_dir) / out.name
    start = time.perf_counter()
    try:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda pt: pt(), points))
    except NumericalGuardError as exc:
        print(f"numerical guard failed: {exc}", file=stderr)
        return 1
    rows = [r for r, _ in results]
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_csv(COLUMNS[cfg["experiment"]], rows), encoding="utf-8")
    manifest = {
        "artifact_version": artifact_version(),
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg["experiment"],
        "config_path": str(config_path),
        "config_sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
        "seed": seed,
        "threads": threads,
        "cutoff": [row.get("cutoff", pt.cutoff) for row, pt in zip(rows, points)],
        "rows": len(rows),
        "output": str(out),
        "wall_time_total": time.perf_counter() - start,
        "wall_time": [t for _, t in results],
    }
    Path(str(out) + ".manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="cvqwc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--output", metavar="DIR", help="directory for the CSV and manifest")
    p_run.add_argument("--threads", type=int, metavar="N", help="worker threads")
    p_run.add_argument("--seed", type=int, metavar="S", help="override the config seed")
    args = parser.parse_args(argv)
    return run(args.config, args.output, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
