"""Scenario runner: ``mwkeldysh scenario.yaml [--out DIR] [--threads N] [--self-test]``.

Exit codes: 0 ok, 2 configuration error, 3 numerical guard, 4 self-test failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import config as C
from .core import NotPhysicalError, partial_trace, renyi_entropy, conserved_measure_k, tensor_product
from .dynamics import (EvolutionJob, FlowNotStationary, StabilityError, SwitchingProfile,
                       oracle_renyi_flow, sample_states)
from .kms import SpectralData, check_kms_multi, renyi_free_energy_identity
from .master import (DegenerateNullSpace, GapTooSmall, build_generator, cumulants, dominant_eigenvalue,
                     keldysh_action, multiworld_flow_via_d0, spectral_gap, stationary_state)
from .multiworld import ReconnectionPattern, pattern_flow
from .perturbative import (NonConvergentExtrapolation, NonStationaryState, default_eta, flow_2nd_states,
                           flow_4th_order, golden_rule_rates, joint_eigenbasis)

log = logging.getLogger("mwkeldysh")

EXIT_SCHEMA, EXIT_NUMERIC, EXIT_SELFTEST = 2, 3, 4
NUMERIC_ERRORS = (StabilityError, FlowNotStationary, NotPhysicalError, NonConvergentExtrapolation,
                  NonStationaryState, GapTooSmall, DegenerateNullSpace, np.linalg.LinAlgError,
                  FloatingPointError)

DEFAULT_TOLERANCES = {"flow_rel": 0.05, "kms": 1e-8, "free_energy": 1e-12, "d0_zero": 1e-12,
                      "correspond_rel": 0.05}


# columns that do not apply to a kind (no broadening, no time step) hold NaN
NA = float("nan")


class SelfTestFailure(RuntimeError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: list, rows: list) -> None:
    rows = sorted(rows, key=lambda r: tuple((0, v) if isinstance(v, (int, float)) else (1, str(v))
                                            for v in r))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _pmap(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# --- scenario kinds ---------------------------------------------------------

def _evolution(cfg: dict) -> dict:
    ev = cfg.get("evolution", {}) or {}
    return {"dt": C.number(ev.get("dt", 0.01), "evolution.dt", positive=True),
            "rate": C.number(ev.get("rate", 0.3), "evolution.rate", positive=True),
            "ramp_lengths": C.number(ev.get("ramp_lengths", 25.0), "evolution.ramp_lengths", positive=True)}


def _states(cfg, sys_, rng):
    st = C.require(cfg, "state", "")
    ra = C.state(C.require(st, "A", "state"), "state.A", sys_.hA, rng)
    rb = C.state(C.require(st, "B", "state"), "state.B", sys_.hB, rng)
    return ra, rb


def run_simulate(cfg, rng, threads):
    lams = C.axis(cfg.get("sweep", {}), "lambda", "sweep", default=[1.0])
    ms = C.axis(cfg.get("sweep", {}), "m", "sweep", default=[2], integer=True)
    times = C.axis(cfg, "times", "")
    dt = C.number((cfg.get("evolution") or {}).get("dt", 0.01), "evolution.dt", positive=True)
    base = C.system(C.require(cfg, "system", ""), "system", rng)
    ra, rb = _states(cfg, base, rng)

    def one(lam):
        s = base.with_lambda(lam)
        job = EvolutionJob(s, tensor_product(ra, rb), 0.0, max(times), dt)
        rows = []
        for t, r in zip(times, sample_states(job, times)):
            rA = partial_trace(r, s.dims, "A")
            k = conserved_measure_k(r, s.dims).real
            for m in ms:
                rows.append([lam, t, m, NA, dt, float(np.trace(r).real), renyi_entropy(rA, m), k])
        return rows

    rows = list(itertools.chain.from_iterable(_pmap(one, lams, threads)))
    return {"simulate.csv": (["lambda", "t", "M", "eta", "dt", "trace", "S_M_A", "K"], rows)}, []


def run_flows(cfg, rng, threads):
    sw_cfg = cfg.get("sweep", {}) or {}
    lams = C.axis(sw_cfg, "lambda", "sweep")
    ms = C.axis(sw_cfg, "m", "sweep", integer=True)
    methods = cfg.get("methods", ["2nd"])
    if not isinstance(methods, list) or not methods or any(m not in ("oracle", "2nd", "4th", "d0") for m in methods):
        raise C.SchemaError("methods", "nonempty subset of [oracle, 2nd, 4th, d0]")
    ev = _evolution(cfg)
    broadening = cfg.get("broadening", "lorentzian" if "oracle" in methods else "gaussian")
    if broadening not in ("gaussian", "lorentzian"):
        raise C.SchemaError("broadening", "gaussian or lorentzian")
    base = C.system(C.require(cfg, "system", ""), "system", rng)
    # the oracle's switching sets its line width; otherwise 3 mean level spacings
    etas = C.axis(sw_cfg, "eta", "sweep", default=[ev["rate"] if "oracle" in methods else default_eta(base)])
    ra, rb = _states(cfg, base, rng)
    _, pA, _ = joint_eigenbasis(base.hA, ra)
    _, pB, _ = joint_eigenbasis(base.hB, rb)
    if "oracle" in methods:
        # oracle pipeline uses the switching rate as its broadening
        if len(etas) != 1 or etas[0] != ev["rate"]:
            raise C.SchemaError("sweep.eta", "with the oracle method eta must equal evolution.rate")

    def one(args):
        lam, m, eta = args
        s = base.with_lambda(lam)
        row = {"lambda": lam, "M": m, "eta": eta, "dt": ev["dt"]}
        if "oracle" in methods:
            t_end = ev["ramp_lengths"] / ev["rate"]
            job = EvolutionJob(s, tensor_product(ra, rb), 0.0, t_end, ev["dt"],
                               SwitchingProfile("exponential", ev["rate"]))
            row["flow_oracle"] = oracle_renyi_flow(job, m).flow
        rates = golden_rule_rates(s, eta, broadening)
        if "2nd" in methods:
            row["flow_2nd"] = flow_2nd_states(rates, pA, pB, m).flow
            half = flow_2nd_states(golden_rule_rates(s, eta / 2, broadening), pA, pB, m).flow
            row["err_eta_2nd"] = abs(row["flow_2nd"] - half)
        if "4th" in methods:
            row["flow_4th"] = flow_4th_order(s, pA, pB, m, eta, broadening).flow
        if "d0" in methods:
            row["flow_d0"] = multiworld_flow_via_d0(build_generator(rates, m=m, pA=pA)).flow
        if "flow_oracle" in row and "flow_2nd" in row:
            row["abs_err"] = abs(row["flow_oracle"] - row["flow_2nd"])
        return row

    grid = list(itertools.product(lams, ms, etas))
    results = _pmap(one, grid, threads)
    optional = ("flow_oracle", "flow_2nd", "err_eta_2nd", "flow_4th", "flow_d0", "abs_err")
    cols = ["lambda", "M", "eta", "dt"] + [c for c in optional if c in results[0]]
    rows = [[r[c] for c in cols] for r in results]
    checks = []
    for r in results:
        if "abs_err" in r:
            rel = r["abs_err"] / max(abs(r["flow_oracle"]), 1e-300)
            checks.append(("flow_rel", f"lambda={r['lambda']} M={r['M']}", rel))
    return {"flows.csv": (cols, rows)}, checks


def run_fcs(cfg, rng, threads):
    base = C.system(C.require(cfg, "system", ""), "system", rng)
    sw_cfg = cfg.get("sweep", {}) or {}
    lam = C.number(cfg.get("lambda", 1.0), "lambda", positive=True)
    s = base.with_lambda(lam)
    eta = C.number(cfg.get("eta", default_eta(s)), "eta", positive=True)
    chis = C.axis(sw_cfg, "chi", "sweep")
    rates = golden_rule_rates(s, eta)
    rg = np.random.default_rng(0)
    a_rates = C.matrix(cfg["a_rates"], "a_rates", rg).real if "a_rates" in cfg else None
    b_rates = C.matrix(cfg["b_rates"], "b_rates", rg).real if "b_rates" in cfg else None

    def fac(c):
        return build_generator(rates, c, a_rates=a_rates, b_rates=b_rates)

    gap = spectral_gap(fac(0.0))
    windows = C.number(cfg.get("window_relaxation_times", 10.0), "window_relaxation_times", positive=True)
    window = windows / gap
    p0 = stationary_state(fac(0.0))
    act = keldysh_action(fac, chis, window)
    d0 = [dominant_eigenvalue(fac(c)) for c in chis]
    rows = [[c, eta, NA, window, d.real, d.imag, v.real, v.imag] for c, d, v in zip(chis, d0, act.values)]
    k = cumulants(fac, window, 2, p0=p0)
    d00 = abs(dominant_eigenvalue(fac(0.0)))
    tables = {"fcs.csv": (["chi", "eta", "dt", "window", "D0_re", "D0_im", "S_re", "S_im"], rows),
              "cumulants.csv": (["order", "eta", "dt", "window", "value"],
                                      [[1, eta, NA, window, k[0]], [2, eta, NA, window, k[1]]])}
    return tables, [("d0_zero", "chi=0", d00)]


def run_kms(cfg, rng, threads):
    hA = C.hermitian(C.matrix(C.require(cfg, "hA", ""), "hA", rng))
    raw = C.require(cfg, "a_ops", "")
    if not isinstance(raw, list) or not raw:
        raise C.SchemaError("a_ops", "need a nonempty list of operators")
    a_ops = [C.hermitian(C.matrix(a, f"a_ops[{i}]", rng)) for i, a in enumerate(raw)]
    sw_cfg = cfg.get("sweep", {}) or {}
    betas = C.axis(sw_cfg, "beta", "sweep")
    ms = C.axis(sw_cfg, "m", "sweep", integer=True)
    eta = C.number(cfg.get("eta", 0.05), "eta", positive=True)
    g = cfg.get("omega_grid", {"min": -4.0, "max": 4.0, "points": 400})
    ws = np.linspace(C.number(g.get("min"), "omega_grid.min"), C.number(g.get("max"), "omega_grid.max"),
                     int(C.number(g.get("points"), "omega_grid.points", positive=True)))
    ws = ws[ws != 0]
    rows, fe_rows, checks = [], [], []
    for b in betas:
        sp = SpectralData(hA, b, a_ops, eta)
        for m in ms:
            for n in range(m + 1):
                res = check_kms_multi(sp, ws, n, m)["residual"]
                rows.append([b, m, n, eta, NA, res])
                checks.append(("kms", f"beta={b} M={m} N={n}", res))
            fe = renyi_free_energy_identity(hA, b, m)["residual"]
            fe_rows.append([b, m, NA, NA, fe])
            checks.append(("free_energy", f"beta={b} M={m}", fe))
    return {"kms.csv": (["beta", "M", "N", "eta", "dt", "residual"], rows),
            "free_energy.csv": (["beta", "M", "eta", "dt", "residual"], fe_rows)}, checks


def run_qhe(cfg, rng, threads):
    from .qhe import Environment, QheSpec, qhe_flows, steady_state
    eng = C.require(cfg, "engine", "")
    energies = C.axis(eng, "energies", "engine")
    upper = C.require(eng, "upper", "engine")
    if not isinstance(upper, list) or len(upper) != len(energies):
        raise C.SchemaError("engine.upper", "one boolean per level")
    omega = C.number(C.require(eng, "omega", "engine"), "engine.omega", positive=True)
    drive = C.matrix(C.require(eng, "drive", "engine"), "engine.drive", rng)
    envs = []
    for i, e in enumerate(C.require(cfg, "environments", "")):
        p = f"environments[{i}]"
        ops = [C.matrix(o, f"{p}.ops[{k}]", rng) for k, o in enumerate(C.require(e, "ops", p))]
        strengths = C.axis(e, "strengths", p)
        envs.append(Environment.from_modes(ops, strengths, upper,
                                           C.number(C.require(e, "temperature", p), f"{p}.temperature", nonneg=True),
                                           bool(e.get("probe", False)), e.get("name", f"env{i}")))
    sw_cfg = cfg.get("sweep", {}) or {}
    ms = C.axis(sw_cfg, "m", "sweep", integer=True)
    temps = C.axis(sw_cfg, "probe_temperature", "sweep")
    try:
        spec = QheSpec(energies, upper, omega, drive, envs)
    except ValueError as exc:
        raise C.SchemaError("engine", str(exc)) from exc
    rho = steady_state(spec)
    rows = []
    for t in temps:
        envs_t = [Environment(e.chi, t, True, e.name, e.modes) if e.probe else e for e in envs]
        spec_t = QheSpec(energies, upper, omega, drive, envs_t)
        for m in ms:
            rep = qhe_flows(spec_t, rho, m)
            b = rep.breakdown
            rows.append([t, m, NA, NA, b["Q_i"], b["Q_c"], rep.flow, b["F_S"], b["F_M_low_T"]])
    return {"qhe.csv": (["probe_temperature", "M", "eta", "dt", "Q_i", "Q_c", "F_M", "F_S", "F_M_low_T"], rows)}, []


def run_correspond(cfg, rng, threads):
    from .correspondence import check_correspondence
    base = C.system(C.require(cfg, "system", ""), "system", rng)
    sw_cfg = cfg.get("sweep", {}) or {}
    lams = C.axis(sw_cfg, "lambda", "sweep")
    ms = C.axis(sw_cfg, "m", "sweep", integer=True)
    beta = C.number(C.require(cfg, "beta", ""), "beta", positive=True)
    ev = _evolution(cfg)
    rb = C.state(C.require(cfg, "stateB", ""), "stateB", base.hB, rng)
    drive = None
    if "drive_B" in cfg:
        d = cfg["drive_B"]
        op = C.hermitian(C.matrix(C.require(d, "op", "drive_B"), "drive_B.op", rng))
        amp = C.number(C.require(d, "amplitude", "drive_B"), "drive_B.amplitude")
        freq = C.number(C.require(d, "frequency", "drive_B"), "drive_B.frequency")
        drive = lambda t: amp * np.cos(freq * t) * op  # noqa: E731

    def one(args):
        lam, m = args
        rep = check_correspondence(base.with_lambda(lam), beta, m, rb, drive, rate=ev["rate"],
                                   ramp_lengths=ev["ramp_lengths"], dt=ev["dt"])
        return [lam, m, ev["rate"], ev["dt"], rep.lhs, rep.rhs, rep.f_i.real, rep.f_c.real, rep.relative]

    rows = _pmap(one, list(itertools.product(lams, ms)), threads)
    checks = [("correspond_rel", f"lambda={r[0]} M={r[1]}", r[-1]) for r in rows if r[1] > 1]
    return {"correspond.csv": (["lambda", "M", "eta", "dt", "lhs", "rhs", "f_i", "f_c", "rel_residual"], rows)}, checks


def _pattern(spec, path):
    if spec in ("K", "k"):
        return ReconnectionPattern.k_measure()
    if isinstance(spec, str) and ":" in spec:
        name, m = spec.split(":", 1)
        if name in ("renyi-A", "renyi-B") and m.isdigit():
            return (ReconnectionPattern.renyi_a if name == "renyi-A" else ReconnectionPattern.renyi_b)(int(m))
    if isinstance(spec, dict) and "perm_a" in spec and "perm_b" in spec:
        try:
            return ReconnectionPattern.custom(spec["perm_a"], spec["perm_b"])
        except ValueError as exc:
            raise C.SchemaError(path, str(exc)) from exc
    raise C.SchemaError(path, "pattern is 'renyi-A:M', 'renyi-B:M', 'K' or {perm_a, perm_b}")


def run_patterns(cfg, rng, threads):
    base = C.system(C.require(cfg, "system", ""), "system", rng)
    ra, rb = _states(cfg, base, rng)
    lams = C.axis(cfg.get("sweep", {}) or {}, "lambda", "sweep")
    raw = C.require(cfg, "patterns", "")
    if not isinstance(raw, list) or not raw:
        raise C.SchemaError("patterns", "need a nonempty list")
    pats = [_pattern(p, f"patterns[{i}]") for i, p in enumerate(raw)]
    ev = _evolution(cfg)

    def one(args):
        lam, (i, pat) = args
        t_end = ev["ramp_lengths"] / ev["rate"]
        sw = SwitchingProfile("exponential", ev["rate"]) if lam != 0 else SwitchingProfile()
        job = EvolutionJob(base.with_lambda(lam), tensor_product(ra, rb), 0.0, t_end, ev["dt"], sw)
        return [lam, i, pat.name, pat.m, ev["rate"], ev["dt"], pattern_flow(job, pat).flow]

    rows = _pmap(one, list(itertools.product(lams, enumerate(pats))), threads)
    return {"patterns.csv": (["lambda", "index", "pattern", "M", "eta", "dt", "flow"], rows)}, []


RUNNERS = {"simulate": run_simulate, "flows": run_flows, "fcs": run_fcs, "kms-check": run_kms,
           "qhe": run_qhe, "correspond": run_correspond, "patterns": run_patterns}


# --- driver -----------------------------------------------------------------

def load_config(path: Path) -> dict:
    try:
        cfg = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise C.SchemaError(str(path), f"cannot read configuration: {exc}") from exc
    if not isinstance(cfg, dict):
        raise C.SchemaError("<root>", "configuration must be a mapping")
    kind = C.require(cfg, "kind", "")
    if kind not in C.KINDS:
        raise C.SchemaError("kind", f"must be one of {', '.join(C.KINDS)}")
    return cfg


def run(cfg: dict, out: Path, threads: int = 1, self_test: bool = False) -> dict:
    seed = int(C.number(cfg.get("seed", 0), "seed"))
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in (cfg.get("tolerances") or {}).items():
        if k not in tol:
            raise C.SchemaError(f"tolerances.{k}", "unknown tolerance")
        tol[k] = C.number(v, f"tolerances.{k}", positive=True)
    rng = np.random.default_rng(seed)
    with np.errstate(over="raise", invalid="raise", divide="ignore"):
        tables, checks = RUNNERS[cfg["kind"]](cfg, rng, threads)
    out.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in tables.items():
        write_csv(out / name, header, rows)
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    failures = [f"{k} {label}: {val:.3e} > {tol[k]:.1e}" for k, label, val in checks if not val <= tol[k]]
    manifest = {"kind": cfg["kind"], "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
                "seed": seed, "tolerances": tol, "version": __version__, "outputs": sorted(tables),
                "self_test": {"ran": self_test, "checks": len(checks), "failures": failures}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if self_test and failures:
        raise SelfTestFailure("; ".join(failures))
    return manifest


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mwkeldysh", description=__doc__.splitlines()[0])
    ap.add_argument("scenario", type=Path)
    ap.add_argument("--out", type=Path, default=None, help="output directory (default: next to the scenario)")
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--self-test", action="store_true", help="fail with exit 4 if cross-checks exceed tolerances")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    threads = args.threads or int(os.environ.get("MWKELDYSH_THREADS", "1"))
    out = args.out or args.scenario.with_suffix("").parent / (args.scenario.stem + "_out")
    try:
        cfg = load_config(args.scenario)
        manifest = run(cfg, out, max(1, threads), args.self_test)
    except C.SchemaError as exc:
        log.error("configuration error at %s", exc)
        return EXIT_SCHEMA
    except SelfTestFailure as exc:
        log.error("self-test failed: %s", exc)
        return EXIT_SELFTEST
    except NUMERIC_ERRORS as exc:
        log.error("numerical guard: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC
    log.info("wrote %s to %s", ", ".join(manifest["outputs"]), out)
    return 0


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
