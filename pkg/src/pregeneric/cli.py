"""Experiment runner: config-driven checks, evolutions and sampling.

Exit codes: 0 all asserted checks pass, 1 a check failed, 2 config/schema
error, 3 runtime error.  Reports are JSON with sorted keys; re-running a
config with the same seed reproduces report.json byte-identically except
for the timestamp field.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PregenericError
from .fields import perturbed_density
from .generic import hypocoercive_to_pregeneric, msqrt_from_A, orthogonality_defect, pregeneric_to_hypocoercive, reconstruction_defect
from .hamiltonian import Hamiltonian, check_reversibility_relation, convexity_check, dissipation_from_Hs, lagrangian_zero_check
from .models import (
    ModelBundle,
    andersen_thermostat,
    build_grid,
    ham_pdmcmc,
    ito_diffusion,
    kinetic_fokker_planck,
    quadratic_potential_spec,
    quartic_potential_spec,
    tilted_potential_spec,
)
from .opalg import LinOp, adjoint_l2mu, check_detailed_balance, split_sym_antisym, stationary_density
from .statespace import Density, finite_space, normalize


class SchemaError(PregenericError):
    pass


def _require_keys(d: dict, allowed: set, required: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise SchemaError(f"unknown keys {sorted(unknown)} in {where}")
    missing = required - set(d)
    if missing:
        raise SchemaError(f"missing keys {sorted(missing)} in {where}")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaError(f"cannot read config: {e}")
    _require_keys(cfg, {"schema", "seed", "model", "tolerances"}, {"schema", "model"}, "config")
    if cfg["schema"] != "pregeneric/1":
        raise SchemaError(f"unsupported schema {cfg.get('schema')!r}")
    cfg.setdefault("seed", 0)
    cfg.setdefault("tolerances", {})
    _require_keys(cfg["tolerances"], {"structure", "exact"}, set(), "tolerances")
    return cfg


def _potential_from(cfg: dict):
    _require_keys(cfg, {"kind", "k", "a", "b"}, {"kind"}, "potential")
    if cfg["kind"] == "quadratic":
        return quadratic_potential_spec(cfg.get("k", 1.0))
    if cfg["kind"] == "quartic":
        return quartic_potential_spec(cfg.get("a", 0.25), cfg.get("b", 0.5))
    raise SchemaError(f"unknown potential kind {cfg['kind']!r}")


def _grid_from(cfg: dict):
    _require_keys(cfg, {"x", "v", "axes"}, set(), "grid")
    if "axes" in cfg:
        return build_grid(cfg["axes"])
    axes = []
    for key in ("x", "v"):
        ax = dict(cfg[key])
        _require_keys(ax, {"min", "max", "n", "boundary"}, {"min", "max", "n"}, f"grid.{key}")
        axes.append(ax)
    return build_grid(axes)


def _chain_fixture(kind: str, perturb: dict | None) -> ModelBundle:
    from .opalg import adjoint_l2

    if kind == "chain2":
        m = np.array([[-1.0, 1.0], [2.0, -2.0]])
    else:
        m = np.array([[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, -1.0]])
    space = finite_space(m.shape[0])
    mu = stationary_density(LinOp(space, m, label=kind))
    if perturb:
        # Negative control: corrupt one entry after mu is computed, so the
        # audit (stationarity / constant annihilation) catches it.
        _require_keys(perturb, {"i", "j", "eps"}, {"i", "j", "eps"}, "model.perturb")
        m = m.copy()
        m[perturb["i"], perturb["j"]] += perturb["eps"]
    L = LinOp(space, m, label=kind)
    return ModelBundle(L=L, L_dual=adjoint_l2(L), mu=mu, meta={"name": kind, "perturbed": bool(perturb)})


def build_model(cfg: dict) -> ModelBundle:
    _require_keys(
        cfg,
        {"kind", "potential", "v_tilde", "grid", "lambda_r", "rotation", "perturb"},
        {"kind"},
        "model",
    )
    kind = cfg["kind"]
    if kind in ("chain2", "chain3"):
        return _chain_fixture(kind, cfg.get("perturb"))
    if kind == "kinetic":
        return kinetic_fokker_planck(_potential_from(cfg["potential"]), _grid_from(cfg["grid"]))
    if kind == "andersen":
        return andersen_thermostat(_potential_from(cfg["potential"]), cfg.get("lambda_r", 1.0), _grid_from(cfg["grid"]))
    if kind == "hampdmcmc":
        pot = _potential_from(cfg["potential"])
        vt = cfg.get("v_tilde", {"kind": "tilt", "slope": 1.0})
        _require_keys(vt, {"kind", "slope"}, {"kind"}, "model.v_tilde")
        if vt["kind"] != "tilt":
            raise SchemaError(f"unknown v_tilde kind {vt['kind']!r}")
        return ham_pdmcmc(tilted_potential_spec(pot, vt.get("slope", 1.0)), cfg.get("lambda_r", 1.0), _grid_from(cfg["grid"]))
    if kind == "diffusion":
        pot = _potential_from(cfg["potential"])
        rot = float(cfg.get("rotation", 0.0))

        def drift(p):
            g = np.stack([pot.dV(p[:, k]) for k in range(p.shape[1])], axis=1)
            if rot and p.shape[1] == 2:
                g = g - rot * np.stack([-g[:, 1], g[:, 0]], axis=1)
            return -g

        return ito_diffusion(drift, 1.0, _grid_from(cfg["grid"]))
    raise SchemaError(f"unknown model kind {kind!r}")


# -- tasks ------------------------------------------------------------------


def structure_checks(bundle: ModelBundle, seed: int, tol_structure: float | None) -> list[dict]:
    tol = bundle.grid_tol() if tol_structure is None else tol_structure
    h = max(ax.spacing for ax in bundle.space.axes) if bundle.space.kind == "grid" else 0.0
    rng = np.random.default_rng(seed)
    checks = []
    val = bundle.validate(tol_structure=tol, seed=seed)
    checks.append(
        {"check": "bundle-invariants", "pass": val["pass"], "defect": val["stationarity_defect"], "tol": tol, "details": val}
    )
    exact_tol = 1e-12
    db = check_detailed_balance(bundle.L, bundle.mu, tol=exact_tol if bundle.space.kind != "grid" else tol)
    d = db.to_dict()
    d["check"] = "detailed-balance"
    d["details"]["informational"] = True  # non-reversible models legitimately fail
    checks.append(d)
    if bundle.hypo is not None:
        G = hypocoercive_to_pregeneric(bundle.hypo)
        worst_rec, worst_orth = 0.0, 0.0
        samples = [perturbed_density(bundle.mu, rng, amplitude=0.25) for _ in range(5)]
        for rho in samples:
            worst_rec = max(worst_rec, reconstruction_defect(bundle.hypo, G, rho))
            worst_orth = max(worst_orth, abs(orthogonality_defect(G.W, rho, G.S)))
        checks.append({"check": "pregeneric-reconstruction", "pass": worst_rec <= tol, "defect": worst_rec, "tol": tol, "details": {"grid_h": h}})
        checks.append({"check": "orthogonality", "pass": worst_orth <= tol, "defect": worst_orth, "tol": tol, "details": {}})
        H2 = pregeneric_to_hypocoercive(G, msqrt_from_A(bundle.hypo.A), samples, tol_orth=max(tol, 1e-10), tol_fact=1e-9)
        dB = float(np.abs((H2.B.matrix - bundle.hypo.B.matrix)).max()) / bundle.hypo.B.scale()
        checks.append({"check": "roundtrip", "pass": dB <= 1e-9, "defect": dB, "tol": 1e-9, "details": {}})
    if bundle.flip is not None:
        from .opalg import check_generalized_reversibility

        rep = check_generalized_reversibility(bundle.L, bundle.mu, bundle.flip, tol=tol, seed=seed)
        d = rep.to_dict()
        checks.append(d)
    return checks


def hamiltonian_checks(bundle: ModelBundle, seed: int, samples: int = 20) -> list[dict]:
    tol = bundle.grid_tol()
    exact = bundle.space.kind != "grid"
    rng = np.random.default_rng(seed)
    checks = []
    Ls, _ = split_sym_antisym(bundle.L, bundle.mu)
    pot = dissipation_from_Hs(Ls, bundle.mu)
    rho = perturbed_density(bundle.mu, rng, amplitude=0.3)
    v = pot.validate(rho, rng)
    checks.append({"check": "Hs-symmetry", "pass": v["pass"], "defect": v["symmetry_defect"], "tol": 1e-10, "details": v})
    flip = bundle.flip
    if flip is None:
        from .opalg import Involution

        flip = Involution.identity(bundle.space)
    rel_tol = 1e-12 if exact else tol
    rep = check_reversibility_relation(bundle.L, bundle.mu, flip, samples=samples, seed=seed, tol=rel_tol)
    checks.append(rep.to_dict() | {"check": "reversibility-relation"})
    crep = convexity_check(
        Hamiltonian(Ls),
        samples=samples,
        seed=seed,
        tol=1e-10,
        rho_sampler=lambda r: perturbed_density(bundle.mu, r, amplitude=0.3),
    )
    checks.append(crep.to_dict())
    if bundle.space.n <= 512:
        lz = lagrangian_zero_check(bundle.L, bundle.mu, perturbed_density(bundle.mu, rng, amplitude=0.3))
        checks.append(lz.to_dict())
    return checks


def _write_report(out_dir: Path, cfg: dict, checks: list[dict], extra: dict | None = None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_hash = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]
    report = {
        "version": __version__,
        "config_hash": cfg_hash,
        "seed": cfg.get("seed", 0),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "checks": checks,
    }
    if extra:
        report.update(extra)
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1, default=_json_default))
    return report


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o)}")


def _asserted_ok(checks: list[dict]) -> bool:
    for c in checks:
        if c.get("details", {}).get("informational"):
            continue
        if not c.get("pass", False):
            return False
    return True


def cmd_structure_check(args) -> int:
    cfg = load_config(args.config)
    bundle = build_model(cfg["model"])
    checks = structure_checks(bundle, cfg["seed"], cfg["tolerances"].get("structure"))
    _write_report(Path(args.out), cfg, checks)
    return 0 if _asserted_ok(checks) else 1


def cmd_hamiltonian_check(args) -> int:
    cfg = load_config(args.config)
    bundle = build_model(cfg["model"])
    checks = hamiltonian_checks(bundle, cfg["seed"], samples=args.samples)
    _write_report(Path(args.out), cfg, checks)
    return 0 if _asserted_ok(checks) else 1


def cmd_fp_evolve(args) -> int:
    from .fpsolve import entropy_decay_report, evolve

    cfg = load_config(args.model_config)
    bundle = build_model(cfg["model"])
    rng = np.random.default_rng(cfg["seed"])
    x = bundle.space.coordinate(0)
    v = bundle.space.coordinate(1) if bundle.space.dim > 1 else 0.0 * x
    rho0 = normalize(Density(bundle.space, bundle.mu.values * np.exp(0.5 * x - 0.3 * v)))
    monitors = tuple(args.monitors.split(",")) if args.monitors else ("mass", "min_value", "S_mu", "h_norm2_mu")
    trace = evolve(bundle, rho0, T=args.T, dt=args.dt, scheme=args.scheme, monitors=monitors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        for row in trace.to_rows():
            wr.writerow(row)
    checks = []
    if "S_mu" in trace.monitors:
        checks.append(entropy_decay_report(trace).to_dict())
    checks.append(
        {
            "check": "mass-conservation",
            "pass": bool(np.max(np.abs(trace.monitor("mass") - 1.0)) <= 1e-8),
            "defect": float(np.max(np.abs(trace.monitor("mass") - 1.0))),
            "tol": 1e-8,
            "details": {"clipped_mass": trace.clipped_mass, "aborted": trace.aborted},
        }
    )
    _write_report(out, cfg, checks, extra={"trace_meta": trace.meta})
    return 0 if _asserted_ok(checks) and not trace.aborted else 1


def cmd_pdmp_sample(args) -> int:
    from .pdmp import KERNEL, PdmpSpec, simulate

    spec = PdmpSpec.quadratic(k=args.potential_k, tilt=args.v_tilde_slope, refresh_rate=args.lambda_r, seed=args.seed)
    traj = simulate(spec, [args.x0, args.v0], T=args.T, skeleton_dt=args.skeleton_dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(t, z[0], z[1], "") for t, z in zip(traj.skeleton_times, traj.skeleton)]
    rows += [(e[0], e[3][0], e[3][1], "refresh" if e[1] == 1 else "bounce") for e in traj.events]
    rows.sort(key=lambda r: r[0])
    with open(out / "trajectory.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "v", "event_kind"])
        wr.writerows(rows)
    report = {
        "kernel": KERNEL,
        "n_events": len(traj.events),
        "n_bounces": len(traj.events_of(2)),
        "n_bound_violations": traj.n_bound_violations,
        "T": args.T,
        "seed": args.seed,
    }
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1))
    return 0


def cmd_full_audit(args) -> int:
    from .fpsolve import entropy_decay_report, evolve

    cfg = load_config(args.config)
    bundle = build_model(cfg["model"])
    checks = structure_checks(bundle, cfg["seed"], cfg["tolerances"].get("structure"))
    checks += hamiltonian_checks(bundle, cfg["seed"], samples=10)
    if args.evolve_T > 0:
        rng = np.random.default_rng(cfg["seed"])
        rho0 = perturbed_density(bundle.mu, rng, amplitude=0.3)
        trace = evolve(bundle, rho0, T=args.evolve_T, monitors=("mass", "S_mu"))
        checks.append(entropy_decay_report(trace).to_dict())
    _write_report(Path(args.out), cfg, checks)
    failing = [c["check"] for c in checks if not c.get("pass") and not c.get("details", {}).get("informational")]
    if failing:
        print("failing checks: " + ", ".join(failing), file=sys.stderr)
        return 1
    return 0


def cmd_render(args) -> int:
    with open(args.report) as fh:
        report = json.load(fh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = 0
    trace_path = Path(args.report).parent / "trace.csv"
    if trace_path.exists():
        with open(trace_path) as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], rows[1:]
        for j, name in enumerate(header[1:], start=1):
            with open(out / f"{name}.csv", "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["t", name])
                for r in data:
                    wr.writerow([r[0], r[j]])
                n += 1
    curves = report.get("curves", {})
    for name, payload in curves.items():
        hs = payload.get("h", [])
        ds = payload.get("defect", [])
        order = payload.get("fitted_order", "")
        with open(out / f"{name}.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["h", "defect", "fitted_order"])
            for hh, dd in zip(hs, ds):
                wr.writerow([hh, dd, order])
            n += 1
    print(f"wrote {n} csv files to {out}")
    return 0


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="pregeneric", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sc = sub.add_parser("structure-check", help="bundle invariants, conversions, orthogonality")
    sc.add_argument("--config", required=True)
    sc.add_argument("--out", default="out")
    sc.set_defaults(fn=cmd_structure_check)

    hc = sub.add_parser("hamiltonian-check", help="Hs symmetry, reversibility relation, convexity")
    hc.add_argument("--config", required=True)
    hc.add_argument("--out", default="out")
    hc.add_argument("--samples", type=int, default=20)
    hc.set_defaults(fn=cmd_hamiltonian_check)

    fe = sub.add_parser("fp-evolve", help="time-integrate the Fokker-Planck equation")
    fe.add_argument("--model-config", required=True)
    fe.add_argument("--T", type=float, default=10.0)
    fe.add_argument("--dt", type=float, default=None)
    fe.add_argument("--scheme", choices=["explicit-rk4", "implicit-euler"], default=None)
    fe.add_argument("--monitors", default="")
    fe.add_argument("--out", default="out")
    fe.set_defaults(fn=cmd_fp_evolve)

    ps = sub.add_parser("pdmp-sample", help="simulate a PDMP trajectory")
    ps.add_argument("--potential-k", type=float, default=1.0)
    ps.add_argument("--v-tilde-slope", type=float, default=1.0)
    ps.add_argument("--lambda-r", type=float, default=1.0)
    ps.add_argument("--T", type=float, default=1000.0)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--skeleton-dt", type=float, default=0.05)
    ps.add_argument("--x0", type=float, default=0.0)
    ps.add_argument("--v0", type=float, default=1.0)
    ps.add_argument("--out", default="out")
    ps.set_defaults(fn=cmd_pdmp_sample)

    fa = sub.add_parser("full-audit", help="run every applicable check suite")
    fa.add_argument("--config", required=True)
    fa.add_argument("--out", default="out")
    fa.add_argument("--evolve-T", type=float, default=0.0)
    fa.set_defaults(fn=cmd_full_audit)

    rd = sub.add_parser("render", help="report.json -> plot-ready CSVs")
    rd.add_argument("--report", required=True)
    rd.add_argument("--out", default="out/render")
    rd.set_defaults(fn=cmd_render)

    args = p.parse_args(argv)
    try:
        return args.fn(args)
    except SchemaError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except PregenericError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
