"""Command-line front end: JSON-configured experiments with CSV/JSON outputs.

Exit codes: 0 success, 1 failed suite checks, 2 invalid configuration,
3 numerical convergence failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .barrier import BarrierSpec, evaluate as eigen_evaluate
from .decay import check_bound, fit_exponent, wiener_average
from .free import (
    EnergyQuadrature,
    SurvivalSeries,
    energy_quadrature_for,
    gaussian_monomial_oracle,
    half_time,
    survival_free,
    time_grid,
)
from .scattering import PulledBackState, propagate_grid, survival_barrier
from .states import (
    CompactBump,
    ConvergenceError,
    GaussianMonomial,
    KQuadrature,
    SampledGrid,
    Scaled,
    default_quadrature,
)
from .timeop import DomainError, domain_check, pullback_stats, stats

EXIT_OK, EXIT_CHECKS, EXIT_INVALID, EXIT_CONVERGENCE = 0, 1, 2, 3
THREADS_ENV = "SURVLAB_THREADS"
ANALYSES = ["survival", "timeop", "pullback", "four-term", "fit", "wiener", "eigen-dump"]

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["state"],
    "properties": {
        "state": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["gaussian_monomial", "compact_bump", "sampled_grid"]},
                "normalize": {"type": "boolean"},
                "n": {"type": "integer", "minimum": 0},
                "a": _POSITIVE,
                "k_lo": _POSITIVE,
                "k_hi": _POSITIVE,
                "p": _POSITIVE,
                "mirror": {"type": "boolean"},
                "nodes": {"type": "array", "items": {"type": "number"}, "minItems": 4},
                "re": {"type": "array", "items": {"type": "number"}},
                "im": {"type": "array", "items": {"type": "number"}},
            },
            "allOf": [
                {"if": {"properties": {"kind": {"const": "gaussian_monomial"}}, "required": ["kind"]},
                 "then": {"propertyNames": {"enum": ["kind", "normalize", "n", "a"]}}},
                {"if": {"properties": {"kind": {"const": "compact_bump"}}, "required": ["kind"]},
                 "then": {"propertyNames": {"enum": ["kind", "normalize", "k_lo", "k_hi", "p", "mirror"]},
                          "required": ["k_lo", "k_hi"]}},
                {"if": {"properties": {"kind": {"const": "sampled_grid"}}, "required": ["kind"]},
                 "then": {"propertyNames": {"enum": ["kind", "normalize", "nodes", "re", "im"]},
                          "required": ["nodes", "re"]}},
            ],
        },
        "hamiltonian": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["free", "barrier"]},
                "V0": _POSITIVE,
                "a": _POSITIVE,
                "sign": {"enum": ["-", "+"]},
            },
            "allOf": [
                {"if": {"properties": {"type": {"const": "barrier"}}, "required": ["type"]},
                 "then": {"required": ["V0", "a"]},
                 "else": {"propertyNames": {"enum": ["type"]}}},
            ],
        },
        "time_grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"t_min": _POSITIVE, "t_max": _POSITIVE,
                           "per_decade": {"type": "integer", "minimum": 1}},
        },
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k_max": _POSITIVE,
                "depth": {"type": "integer", "minimum": 1, "maximum": 60},
                "order": {"type": "integer", "minimum": 4, "maximum": 128},
                "inner_order": {"type": "integer", "minimum": 4, "maximum": 128},
                "state_order": {"type": "integer", "minimum": 4, "maximum": 128},
            },
        },
        "analyses": {"type": "array", "items": {"enum": ANALYSES}, "uniqueItems": True},
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "window": {"type": "array", "items": _POSITIVE, "minItems": 2, "maxItems": 2},
                "n": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "wiener": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"T": _POSITIVE, "samples": {"type": "integer", "minimum": 3}},
        },
        "eigen": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "x_points": {"type": "integer", "minimum": 1},
                "k_points": {"type": "integer", "minimum": 1},
                "k_max": _POSITIVE,
                "x_max": _POSITIVE,
            },
        },
        "spot_checks": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
}

DEFAULTS = {
    "hamiltonian": {"type": "free"},
    "time_grid": {"t_min": 0.1, "t_max": 1000.0, "per_decade": 40},
    "quadrature": {"k_max": 12.0, "depth": 30, "order": 40, "inner_order": 16, "state_order": 24},
    "analyses": ["survival", "timeop", "fit"],
    "fit": {"window": [10.0, 1000.0], "n": 2},
    "wiener": {"T": 1000.0, "samples": 20001},
    "eigen": {"x_points": 41, "k_points": 401, "k_max": 12.0, "x_max": None},
    "spot_checks": 8,
    "output_dir": "survlab_out",
    "seed": 0,
}

STATE_DEFAULTS = {
    "gaussian_monomial": {"normalize": True, "n": 0, "a": 0.5},
    "compact_bump": {"normalize": True, "p": 1.0, "mirror": False},
    "sampled_grid": {"normalize": False},
}


class ConfigError(ValueError):
    """A configuration value is unusable; ``field`` names it."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


# ---------------------------------------------------------------------------
# configuration


def _path(error) -> str:
    parts = [str(p) for p in error.absolute_path]
    return ".".join(parts) or "<root>"


def validate(config: dict) -> dict:
    """Schema-check, fill defaults and cross-check; returns the effective config."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        raise ConfigError(_path(errors[0]), errors[0].message)
    cfg = copy.deepcopy(DEFAULTS)
    for key, value in config.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(copy.deepcopy(value))
        else:
            cfg[key] = copy.deepcopy(value)
    if config.get("hamiltonian", {}).get("type", "free") == "barrier":
        cfg["hamiltonian"].setdefault("sign", "-")
    else:
        cfg["hamiltonian"] = {"type": "free"}
    state = dict(STATE_DEFAULTS[cfg["state"]["kind"]])
    state.update(cfg["state"])
    cfg["state"] = state

    if state["kind"] == "compact_bump" and not state["k_lo"] < state["k_hi"]:
        raise ConfigError("state.k_hi", "must exceed state.k_lo")
    if state["kind"] == "sampled_grid":
        n = len(state["nodes"])
        if len(state["re"]) != n or len(state.get("im", [0.0] * n)) != n:
            raise ConfigError("state.re", "nodes, re and im must have equal lengths")
        if np.any(np.diff(state["nodes"]) <= 0):
            raise ConfigError("state.nodes", "must be strictly increasing")
    tg = cfg["time_grid"]
    if not tg["t_min"] < tg["t_max"]:
        raise ConfigError("time_grid.t_max", "must exceed time_grid.t_min")
    lo, hi = cfg["fit"]["window"]
    if not lo < hi:
        raise ConfigError("fit.window", "need window[0] < window[1]")
    if "eigen-dump" in cfg["analyses"] and cfg["hamiltonian"]["type"] != "barrier":
        raise ConfigError("hamiltonian.type", "eigen-dump requires a barrier hamiltonian")
    if "pullback" in cfg["analyses"] and cfg["hamiltonian"]["type"] != "barrier":
        raise ConfigError("hamiltonian.type", "pullback requires a barrier hamiltonian")
    return cfg


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError("config", f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"not valid JSON ({exc})") from exc


def build_state(spec: dict):
    kind = spec["kind"]
    if kind == "gaussian_monomial":
        return GaussianMonomial(int(spec["n"]), float(spec["a"]), bool(spec["normalize"]))
    if kind == "compact_bump":
        return CompactBump(float(spec["k_lo"]), float(spec["k_hi"]), float(spec["p"]), bool(spec["mirror"]),
                           bool(spec["normalize"]))
    values = np.asarray(spec["re"], dtype=float) + 1j * np.asarray(spec.get("im", [0.0] * len(spec["re"])))
    grid = SampledGrid(np.asarray(spec["nodes"], dtype=float), values)
    if spec["normalize"]:
        return Scaled(grid, 1 / math.sqrt(grid.norm2(default_quadrature(grid))))
    return grid


def build_barrier(spec: dict) -> BarrierSpec | None:
    if spec["type"] != "barrier":
        return None
    return BarrierSpec(float(spec["V0"]), float(spec["a"]))


# ---------------------------------------------------------------------------
# output


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return {"re": _clean(obj.real), "im": _clean(obj.imag)}
    return obj


def to_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Outputs:
    def __init__(self, directory):
        self.directory = Path(directory)
        self.files = {}

    def write(self, name: str, text: str) -> None:
        write_atomic(self.directory / name, text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# analyses


class Stage:
    """Prefixes convergence failures with the module and parameter involved."""

    def __init__(self, module: str, parameter: str):
        self.module, self.parameter = module, parameter

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if isinstance(exc, ConvergenceError) and not str(exc).startswith("["):
            raise ConvergenceError(f"[{self.module}; {self.parameter}] {exc}") from exc
        return False


def _energy_quadrature(cfg: dict, *states) -> EnergyQuadrature:
    q = cfg["quadrature"]
    return energy_quadrature_for(*states, k_max=q["k_max"], depth=q["depth"], order=q["order"],
                                 inner_order=q["inner_order"])


def _k_quadrature(cfg: dict, *states) -> KQuadrature:
    q = cfg["quadrature"]
    return default_quadrature(*states, k_max=q["k_max"], depth=q["depth"], order=q["state_order"])


def _survival(cfg, state, bar, times):
    if bar is None:
        with Stage("free_evolution", "quadrature.order"):
            series = survival_free(state, times, _energy_quadrature(cfg, state))
        return series, None
    pulled = PulledBackState(state, bar, cfg["hamiltonian"]["sign"])
    with Stage("scattering_dynamics", "quadrature.order"):
        result = survival_barrier(state, bar, times, cfg["hamiltonian"]["sign"], _energy_quadrature(cfg, pulled))
    return result.series, result


def _spot_check(cfg, state, bar, series) -> dict:
    """Re-evaluate randomly chosen grid times on a refined quadrature."""
    count = min(cfg["spot_checks"], series.times.size)
    if count == 0:
        return {"count": 0}
    rng = np.random.default_rng(cfg["seed"])
    times = np.sort(rng.choice(series.times, size=count, replace=False))
    if bar is None:
        quad = _energy_quadrature(cfg, state).refined()
        fine = survival_free(state, times, quad).amplitudes
        rtol, module = 1e-8, "free_evolution"
    else:
        pulled = PulledBackState(state, bar, cfg["hamiltonian"]["sign"])
        quad = _energy_quadrature(cfg, pulled).refined()
        fine = survival_barrier(state, bar, times, cfg["hamiltonian"]["sign"], quad).series.amplitudes
        rtol, module = 1e-6, "scattering_dynamics"
    coarse = series.at(times)
    scale = max(abs(complex(series.at([0.0])[0])), 1e-300)
    err = np.abs(fine - coarse)
    worst = int(np.argmax(err))
    if err[worst] > rtol * scale:
        raise ConvergenceError(f"[{module}; quadrature.order] survival amplitude differs by {err[worst]:.3e} "
                               f"under refinement at t={float(times[worst])!r}")
    return {"count": count, "seed": cfg["seed"], "times": times.tolist(), "max_abs_difference": float(err[worst]),
            "tolerance_abs": rtol * scale}


def _timeop(cfg, state, bar, series) -> dict:
    quad = _k_quadrature(cfg, state)
    with Stage("ab_time_operator", "quadrature.state_order"):
        verdict = domain_check(state, quad)
        out = {"domain": verdict.to_dict()}
        if verdict.in_domain:
            st = stats(state, quad, verdict)
            out["stats"] = st.to_dict()
            if series is not None and bar is None:
                out["bound_check"] = check_bound(series, st.bound_coefficient).to_dict()
                tau = half_time(series)
                out["half_time"] = {"value": tau.value, "lower_bound": tau.lower_bound,
                                    "bound": st.half_time_bound, "holds": tau.value <= st.half_time_bound}
        else:
            out["stats"] = None
            out["refusal"] = str(DomainError(verdict, "timeop"))
    return out


def _pullback(cfg, state, bar, series) -> dict:
    with Stage("ab_time_operator", "quadrature.state_order"):
        try:
            st = pullback_stats(state, bar, cfg["hamiltonian"]["sign"])
        except DomainError as exc:
            return {"domain": exc.verdict.to_dict(), "stats": None, "refusal": str(exc)}
    out = {"domain": {"in_domain": True}, "stats": st.to_dict()}
    if series is not None:
        out["bound_check"] = check_bound(series, st.bound_coefficient).to_dict()
    return out


def _eigen_csv(cfg, bar) -> str:
    e = cfg["eigen"]
    x_max = e["x_max"] if e["x_max"] is not None else 1.5 * bar.a
    xs = np.linspace(-x_max, x_max, e["x_points"]) if e["x_points"] > 1 else np.array([0.0])
    ks = np.linspace(-e["k_max"], e["k_max"], e["k_points"]) if e["k_points"] > 1 else np.array([e["k_max"]])
    ks = ks[ks != 0]
    X, K = np.meshgrid(xs, ks, indexing="ij")
    with Stage("barrier_spectrum", "eigen.k_max"):
        ev = eigen_evaluate(bar, X.ravel(), K.ravel(), cfg["hamiltonian"]["sign"])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["x", "k", "re_phi", "im_phi", "re_dphi_dk", "im_dphi_dk", "branch"])
    for x, k, phi, dk, br in zip(X.ravel(), K.ravel(), ev.phi, ev.dphi_dk, ev.branch):
        writer.writerow([repr(float(x)), repr(float(k)), repr(float(phi.real)), repr(float(phi.imag)),
                         repr(float(dk.real)), repr(float(dk.imag)), str(br)])
    return buf.getvalue()


def run_config(cfg: dict, command: str = "run") -> dict:
    """Execute a validated config; returns the manifest."""
    out = Outputs(cfg["output_dir"])
    state = build_state(cfg["state"])
    bar = build_barrier(cfg["hamiltonian"])
    analyses = set(cfg["analyses"])
    diagnostics = {}
    tg = cfg["time_grid"]
    times = time_grid(tg["t_min"], tg["t_max"], tg["per_decade"])

    series = result = None
    needs_series = analyses & {"survival", "four-term", "fit", "wiener", "timeop", "pullback"}
    if needs_series:
        series, result = _survival(cfg, state, bar, times)
        diagnostics["spot_check"] = _spot_check(cfg, state, bar, series)
        diagnostics["energy_quadrature"] = series.quadrature

    if "survival" in analyses or "four-term" in analyses:
        extra = None
        if "four-term" in analyses:
            if result is None:
                cols = np.stack([series.amplitudes] + [np.zeros_like(series.amplitudes)] * 3, axis=1)
            else:
                cols = result.four_terms(times)
            extra = {name: cols[:, i] for i, name in enumerate(["psi_psi", "g_psi", "psi_g", "g_g"])}
            diagnostics["four_term_max_residual"] = float(np.max(np.abs(cols.sum(axis=1) - series.amplitudes)))
        out.write("survival.csv", series.to_csv(extra))

    if "timeop" in analyses or "pullback" in analyses:
        report = {"state": _timeop(cfg, state, bar, series)} if "timeop" in analyses else {}
        if "pullback" in analyses:
            report["pullback"] = _pullback(cfg, state, bar, series)
        out.write("timeop.json", to_json(report))

    if "fit" in analyses or "wiener" in analyses:
        report = {}
        if "fit" in analyses:
            report.update(fit_exponent(series, tuple(cfg["fit"]["window"]), n=cfg["fit"]["n"]).to_dict())
        if "wiener" in analyses:
            w = cfg["wiener"]
            dense = np.linspace(0.0, w["T"], w["samples"])
            report["wiener_average"] = {"T": w["T"], "samples": w["samples"],
                                        "value": wiener_average(SurvivalSeries(dense, series.at(dense)), w["T"])}
        out.write("decay_report.json", to_json(report))

    if "eigen-dump" in analyses:
        out.write("eigen.csv", _eigen_csv(cfg, bar))

    manifest = {
        "tool": "survlab",
        "version": __version__,
        "command": command,
        "config": cfg,
        "state_quadrature": _k_quadrature(cfg, state).describe(),
        "diagnostics": diagnostics,
        "outputs": dict(sorted(out.files.items())),
        "threads": os.environ.get(THREADS_ENV),
    }
    out.write("manifest.json", to_json(manifest))
    return manifest


def fit_decay_file(csv_path, output_dir, window=(10.0, 1e3), n=2.0, wiener_T=None) -> dict:
    """Decay report for a survival CSV written by this tool (or any t, re_A, im_A / abs2_A table)."""
    try:
        text = Path(csv_path).read_text()
    except FileNotFoundError as exc:
        raise ConfigError("csv", f"file not found: {csv_path}") from exc
    try:
        series = SurvivalSeries.from_csv(text)
    except (KeyError, ValueError) as exc:
        raise ConfigError("csv", f"unreadable survival table ({exc})") from exc
    report = fit_exponent(series, window, n=n).to_dict()
    if wiener_T is not None:
        report["wiener_average"] = {"T": wiener_T, "samples": int(series.times.size),
                                    "value": wiener_average(series, wiener_T)}
    out = Outputs(output_dir)
    out.write("decay_report.json", to_json(report))
    manifest = {"tool": "survlab", "version": __version__, "command": "fit-decay",
                "config": {"csv": str(csv_path), "window": list(window), "n": n, "wiener_T": wiener_T},
                "outputs": dict(out.files), "threads": os.environ.get(THREADS_ENV)}
    out.write("manifest.json", to_json(manifest))
    return report


# ---------------------------------------------------------------------------
# canned suite

SUITE_STATES = {
    "psi0": {"kind": "gaussian_monomial", "n": 0, "a": 0.5},
    "psi1": {"kind": "gaussian_monomial", "n": 1, "a": 0.5},
    "phi2": {"kind": "gaussian_monomial", "n": 2, "a": 0.5},
    "phi3": {"kind": "gaussian_monomial", "n": 3, "a": 0.5},
    "bump": {"kind": "compact_bump", "k_lo": 0.5, "k_hi": 2.5},
}
SUITE_HAMILTONIANS = {"free": None, "barrier(1,1)": (1.0, 1.0), "barrier(4,0.5)": (4.0, 0.5)}
SUITE_WINDOW = (10.0, 1e3)
ORACLE_TOL = {"closed_form": 1e-8, "refinement": 1e-8, "grid": 1e-4}


def _grid_settings(bar: BarrierSpec) -> dict:
    # tall barriers need a finer grid for the split-step error to stay below 1e-4
    return {"points": 2**14, "dt": None} if bar.V0 <= 1 else {"points": 2**16, "dt": 0.00125}


def suite_row(state_name: str, ham_name: str) -> dict:
    spec = dict(STATE_DEFAULTS[SUITE_STATES[state_name]["kind"]], **SUITE_STATES[state_name])
    state = build_state(spec)
    params = SUITE_HAMILTONIANS[ham_name]
    bar = BarrierSpec(*params) if params else None
    times = time_grid()
    row = {"state": state_name, "hamiltonian": ham_name}
    if bar is None:
        series = survival_free(state, times)
    else:
        series = survival_barrier(state, bar, times).series
    report = fit_exponent(series, SUITE_WINDOW, n=2)
    row.update(exponent=report.exponent, classification=report.classification)

    try:
        st = stats(state) if bar is None else pullback_stats(state, bar)
        bc = check_bound(series, st.bound_coefficient)
        row.update(bound_coefficient=st.bound_coefficient, bound_holds=bc.holds, bound_note="")
    except DomainError as exc:
        row.update(bound_coefficient=None, bound_holds=None, bound_note=f"not in domain: {', '.join(exc.verdict.failed)}")

    if bar is None and spec["kind"] == "gaussian_monomial":
        ref = gaussian_monomial_oracle(spec["n"], spec["a"], times)
        row.update(oracle="closed_form", oracle_error=float(np.max(np.abs(series.amplitudes - ref))))
    elif bar is None:
        fine = survival_free(state, times, energy_quadrature_for(state).refined())
        row.update(oracle="refinement", oracle_error=float(np.max(np.abs(series.amplitudes - fine.amplitudes))))
    else:
        t_short = np.linspace(0.0, 20.0, 41)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            grid = propagate_grid(state, bar, t_short, **_grid_settings(bar))
        row.update(oracle="grid", oracle_error=float(np.nanmax(np.abs(series.at(t_short) - grid.overlaps)))
                   if not grid.truncated else math.inf)
        dense = np.linspace(0.0, 1e3, 20001)
        row["wiener_average"] = wiener_average(SurvivalSeries(dense, series.at(dense)), 1e3)

    row["failures"] = _row_failures(row, spec, bar)
    return row


def _row_failures(row, spec, bar) -> list[str]:
    fails = []
    name = row["state"]
    if bar is None and name == "psi0" and abs(row["exponent"] - 1) > 0.05:
        fails.append(f"exponent {row['exponent']:.4f} != 1 +- 0.05")
    if bar is None and name == "psi1" and abs(row["exponent"] - 3) > 0.05:
        fails.append(f"exponent {row['exponent']:.4f} != 3 +- 0.05")
    if bar is not None and name in ("phi2", "phi3", "bump"):
        if not row["exponent"] >= 1.9:
            fails.append(f"exponent {row['exponent']:.4f} < 1.9")
        if row["classification"] != "InC(2)":
            fails.append(f"classification {row['classification']}")
        if not row["wiener_average"] < 1e-3:
            fails.append(f"wiener average {row['wiener_average']:.3e} >= 1e-3")
    if row["bound_holds"] is False:
        fails.append("t^2 |A|^2 exceeds the time-operator bound")
    if not row["oracle_error"] <= ORACLE_TOL[row["oracle"]]:
        fails.append(f"{row['oracle']} oracle error {row['oracle_error']:.3e} > {ORACLE_TOL[row['oracle']]:g}")
    return fails


SUITE_COLUMNS = ["state", "hamiltonian", "exponent", "classification", "bound_coefficient", "bound_holds",
                 "bound_note", "oracle", "oracle_error", "wiener_average", "failures"]


def reproduce_suite(output_dir, log=print) -> list[dict]:
    rows = []
    for ham_name in SUITE_HAMILTONIANS:
        for state_name in SUITE_STATES:
            with Stage("lab_cli", f"suite row {state_name}/{ham_name}"):
                row = suite_row(state_name, ham_name)
            rows.append(row)
            status = "ok" if not row["failures"] else "FAIL: " + "; ".join(row["failures"])
            log(f"{state_name:5s} {ham_name:15s} exponent {row['exponent']:8.4f} {row['classification']:13s} "
                f"{row['oracle']} err {row['oracle_error']:.2e}  {status}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(SUITE_COLUMNS)
    for row in rows:
        writer.writerow(["" if row.get(c) is None else
                         ("; ".join(row[c]) if c == "failures" else
                          repr(float(row[c])) if isinstance(row.get(c), float) else str(row[c]))
                         for c in SUITE_COLUMNS])
    out = Outputs(output_dir)
    out.write("summary.csv", buf.getvalue())
    out.write("summary.json", to_json({"rows": rows}))
    manifest = {"tool": "survlab", "version": __version__, "command": "suite",
                "config": {"states": SUITE_STATES, "hamiltonians": SUITE_HAMILTONIANS,
                           "time_grid": {"t_min": 0.1, "t_max": 1000.0, "per_decade": 40},
                           "fit_window": list(SUITE_WINDOW), "oracle_tolerances": ORACLE_TOL,
                           "grid_oracle": {"times": "41 points on [0, 20]",
                                           "settings": {h: _grid_settings(BarrierSpec(*p)) for h, p in
                                                        SUITE_HAMILTONIANS.items() if p}},
                           "wiener": {"T": 1000.0, "samples": 20001}},
                "outputs": dict(sorted(out.files.items())), "threads": os.environ.get(THREADS_ENV)}
    out.write("manifest.json", to_json(manifest))
    return rows


# ---------------------------------------------------------------------------
# argument parsing

# (flag, config path, type); flags mirror config keys and win over the file
STATE_FLAGS = [
    ("--state-kind", "state.kind", str),
    ("--state-n", "state.n", int),
    ("--state-a", "state.a", float),
    ("--state-k-lo", "state.k_lo", float),
    ("--state-k-hi", "state.k_hi", float),
    ("--state-p", "state.p", float),
]
HAMILTONIAN_FLAGS = [
    ("--hamiltonian-type", "hamiltonian.type", str),
    ("--hamiltonian-V0", "hamiltonian.V0", float),
    ("--hamiltonian-a", "hamiltonian.a", float),
    ("--hamiltonian-sign", "hamiltonian.sign", str),
]
COMMON_FLAGS = [
    ("--time-grid-t-min", "time_grid.t_min", float),
    ("--time-grid-t-max", "time_grid.t_max", float),
    ("--time-grid-per-decade", "time_grid.per_decade", int),
    ("--quadrature-k-max", "quadrature.k_max", float),
    ("--quadrature-depth", "quadrature.depth", int),
    ("--quadrature-order", "quadrature.order", int),
    ("--quadrature-state-order", "quadrature.state_order", int),
    ("--output-dir", "output_dir", str),
    ("--seed", "seed", int),
    ("--spot-checks", "spot_checks", int),
]
EIGEN_FLAGS = [
    ("--eigen-x-points", "eigen.x_points", int),
    ("--eigen-k-points", "eigen.k_points", int),
    ("--eigen-k-max", "eigen.k_max", float),
    ("--eigen-x-max", "eigen.x_max", float),
]
FIT_FLAGS = [("--fit-n", "fit.n", float)]


def _dest(path: str) -> str:
    return "cfg__" + path.replace(".", "__")


def _add_flags(parser, flags):
    for flag, path, kind in flags:
        parser.add_argument(flag, dest=_dest(path), type=kind, default=None, metavar=path.rsplit(".", 1)[-1].upper(),
                            help=f"overrides config key {path}")


def _apply_flags(config: dict, args, flags) -> dict:
    config = copy.deepcopy(config)
    for _flag, path, _kind in flags:
        value = getattr(args, _dest(path), None)
        if value is None:
            continue
        node = config
        *parents, leaf = path.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    if getattr(args, "no_normalize", False):
        config.setdefault("state", {})["normalize"] = False
    if getattr(args, "mirror", False):
        config.setdefault("state", {})["mirror"] = True
    ham = config.get("hamiltonian", {})
    if ("V0" in ham or "a" in ham) and "type" not in ham:
        ham["type"] = "barrier"
    return config


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="survlab", description="Survival amplitudes and time-operator bounds.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    v.add_argument("config")

    r = sub.add_parser("run", help="run every analysis listed in a config")
    r.add_argument("config")
    _add_flags(r, STATE_FLAGS + HAMILTONIAN_FLAGS + COMMON_FLAGS + EIGEN_FLAGS + FIT_FLAGS)

    for name, help_text in (("survival", "write survival.csv"), ("timeop", "write timeop.json")):
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", default=None)
        _add_flags(s, STATE_FLAGS + HAMILTONIAN_FLAGS + COMMON_FLAGS)
        s.add_argument("--no-normalize", action="store_true", help="sets state.normalize to false")
        s.add_argument("--mirror", action="store_true", help="sets state.mirror to true")
        if name == "survival":
            s.add_argument("--four-term", action="store_true", help="add the four-term columns")
        else:
            s.add_argument("--pullback", action="store_true", help="also analyse the pulled-back state")

    e = sub.add_parser("barrier-eigen", help="write eigen.csv for a barrier")
    e.add_argument("--config", default=None)
    _add_flags(e, HAMILTONIAN_FLAGS + EIGEN_FLAGS + [("--output-dir", "output_dir", str)])

    f = sub.add_parser("fit-decay", help="fit the tail exponent of a survival CSV")
    f.add_argument("csv")
    f.add_argument("--t-lo", type=float, default=10.0)
    f.add_argument("--t-hi", type=float, default=1e3)
    f.add_argument("--n", type=float, default=2.0)
    f.add_argument("--wiener-T", type=float, default=None)
    f.add_argument("--output-dir", default="survlab_out")

    s = sub.add_parser("suite", help="run the canned state x hamiltonian matrix")
    s.add_argument("--output-dir", default="survlab_suite")
    return p


def _config_for(args) -> dict:
    base = load_config(args.config) if getattr(args, "config", None) else {}
    if args.command == "validate":
        return base
    if args.command == "run":
        return _apply_flags(base, args, STATE_FLAGS + HAMILTONIAN_FLAGS + COMMON_FLAGS + EIGEN_FLAGS + FIT_FLAGS)
    if args.command == "barrier-eigen":
        config = _apply_flags(base, args, HAMILTONIAN_FLAGS + EIGEN_FLAGS + [("--output-dir", "output_dir", str)])
        config.setdefault("state", {}).setdefault("kind", "gaussian_monomial")
        config["analyses"] = ["eigen-dump"]
        return config
    config = _apply_flags(base, args, STATE_FLAGS + HAMILTONIAN_FLAGS + COMMON_FLAGS)
    config.setdefault("state", {}).setdefault("kind", "gaussian_monomial")
    if args.command == "survival":
        config["analyses"] = ["survival"] + (["four-term"] if args.four_term else [])
    else:
        config["analyses"] = ["timeop"] + (["pullback"] if args.pullback else [])
    return config


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return None
    try:
        count = int(raw)
    except ValueError as exc:
        raise ConfigError(THREADS_ENV, f"must be a positive integer, got {raw!r}") from exc
    if count < 1:
        raise ConfigError(THREADS_ENV, f"must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=count)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        limiter = _thread_limit()
        try:
            return _dispatch(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except (ConfigError, jsonschema.ValidationError) as exc:
        print(f"survlab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"survlab: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ValueError as exc:
        print(f"survlab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


def _dispatch(args) -> int:
    if args.command == "suite":
        rows = reproduce_suite(args.output_dir)
        failed = [r for r in rows if r["failures"]]
        for r in failed:
            print(f"FAILED {r['state']}/{r['hamiltonian']}: {'; '.join(r['failures'])}", file=sys.stderr)
        return EXIT_CHECKS if failed else EXIT_OK
    if args.command == "fit-decay":
        report = fit_decay_file(args.csv, args.output_dir, (args.t_lo, args.t_hi), args.n, args.wiener_T)
        print(to_json(report), end="")
        return EXIT_OK
    cfg = validate(_config_for(args))
    if args.command == "validate":
        print(to_json(cfg), end="")
        return EXIT_OK
    manifest = run_config(cfg, args.command)
    print(f"wrote {', '.join(list(manifest['outputs']) + ['manifest.json'])} to {cfg['output_dir']}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
