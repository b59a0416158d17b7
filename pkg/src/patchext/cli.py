"""Command-line interface.

Subcommands: ``shelling`` (dump a patch enumeration), ``patch-check``
(compatibility + constraint verification on one vertex patch),
``stability-sweep`` (discrete/proxy energy ratio tables), and ``estimate``
(guaranteed error bound for a problem bundle).

Exit codes: 0 success, 1 numerical failure (with a machine-readable JSON
diagnostic on stdout), 2 usage errors.  The default seed comes from the
PATCHEXT_SEED environment variable; CLI flags override config-file values
which override defaults.
"""

import argparse
import json
import os
import sys

import numpy as np

from .errors import IncompatibleData, PatchextError

SCHEMA_SWEEP = "patchext-sweep v1"
SCHEMA_ESTIMATE = "patchext-estimate v1"


def _default_seed():
    try:
        return int(os.environ.get("PATCHEXT_SEED", "0"))
    except ValueError:
        return 0


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _fail(diag):
    print(json.dumps(diag, sort_keys=True))
    return 1


def _fmt(x):
    return f"{x:.12e}"


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_shelling(args):
    from .meshio import read_mesh
    from .estimator import extract_patch
    from .shelling import enumerate_patch, verify_enumeration

    mesh = read_mesh(args.mesh)
    patch, star = extract_patch(mesh, args.vertex)
    enum = enumerate_patch(patch, seed=args.seed)
    ok, viol = verify_enumeration(patch, enum)
    out = {
        "schema": "patchext-shelling v1",
        "vertex": args.vertex,
        "order": [star[i] for i in enum.order],
        "sharp": [sorted(map(list, s)) for s in enum.sharp],
        "flat": [sorted(map(list, s)) for s in enum.flat],
        "valid": bool(ok),
        "violations": viol,
    }
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0 if ok else 1


def _patch_for_check(args):
    from .meshio import read_mesh
    from .estimator import extract_patch

    mesh = read_mesh(args.mesh)
    patch, _ = extract_patch(mesh, args.vertex)
    return patch


def cmd_patch_check(args):
    from .families import random_h1_data, random_hdiv_data
    from .patch import (FaceData, check_compatibility_h1,
                        check_compatibility_hdiv)
    from .shelling import enumerate_patch
    from .extension import (audit_h1, audit_hdiv, global_min_h1,
                            global_min_hdiv, sweep_construct_h1,
                            sweep_construct_hdiv)
    from .boundary import boundary_reduction, solve_boundary_patch

    patch = _patch_for_check(args)
    p = args.degree
    checks = []

    if args.setting == "h1":
        if args.data:
            from .meshio import read_face_coeffs
            vals = read_face_coeffs(args.data)
            from ._backend import tri_mode_count
            r = FaceData(vals, p)
        else:
            r = random_h1_data(patch, p, args.seed)
        rep = check_compatibility_h1(patch, r)
        checks.append(("compatibility", rep.passed,
                       max(rep.boundary_defect, rep.edge_defect)))
        if not rep.passed:
            edge = max((d for d in rep.detail if d[0] == "edge"),
                       key=lambda d: d[2], default=None)
            face = max((d for d in rep.detail if d[0] == "face"),
                       key=lambda d: d[2], default=None)
            _print_checks(checks)
            return _fail({"status": "incompatible-data", "setting": "h1",
                          "edge": list(edge[1]) if edge else None,
                          "edge_defect": edge[2] if edge else 0.0,
                          "face_defect": face[2] if face else 0.0,
                          "tolerance": rep.tol})
        if patch.kind == "interior":
            enum = enumerate_patch(patch, seed=args.seed)
            w = sweep_construct_h1(patch, enum, r, p)
            aud = audit_h1(patch, w, r)
            checks.append(("sweep-constraints", max(aud.values()) <= 1e-9,
                           max(aud.values())))
            res = global_min_h1(patch, r, p, enumeration=enum, check=False)
        else:
            res = solve_boundary_patch(patch, r, "H1", p, check=False)
        aud = res.constraint_residuals
        checks.append(("minimizer-constraints", max(aud.values()) <= 1e-9,
                       max(aud.values())))
        energy = res.energy
        if args.boundary and patch.kind == "boundary":
            print(f"direct energy      {_fmt(res.energy)}")
            red = boundary_reduction(patch, r, "H1", p)
            checks.append(("restricted-admissible",
                           max(red["restricted_audit"].values()) <= 1e-9,
                           max(red["restricted_audit"].values())))
            print(f"restricted energy  {_fmt(red['restricted_energy'])}")
            print(f"symmetrized energy {_fmt(red['sym_result'].energy)}")
    else:
        if args.data:
            raise PatchextError("--data for hdiv checks is not supported; "
                                "H(div) data needs faces and cells")
        r_faces, r_cells = random_hdiv_data(patch, p, args.seed)
        rep = check_compatibility_hdiv(patch, r_faces, r_cells)
        checks.append(("compatibility", rep.passed, rep.boundary_defect))
        if not rep.passed:
            _print_checks(checks)
            return _fail({"status": "incompatible-data", "setting": "hdiv",
                          "defect": rep.boundary_defect, "tolerance": rep.tol})
        if patch.kind == "interior":
            enum = enumerate_patch(patch, seed=args.seed)
            w = sweep_construct_hdiv(patch, enum, r_faces, r_cells, p)
            aud = audit_hdiv(patch, w, r_faces, r_cells)
            checks.append(("sweep-constraints", max(aud.values()) <= 1e-9,
                           max(aud.values())))
            res = global_min_hdiv(patch, r_faces, r_cells, p,
                                  enumeration=enum, check=False)
        else:
            res = solve_boundary_patch(patch, (r_faces, r_cells), "Hdiv", p,
                                       check=False)
        aud = res.constraint_residuals
        checks.append(("minimizer-constraints", max(aud.values()) <= 1e-9,
                       max(aud.values())))
        energy = res.energy
        if args.boundary and patch.kind == "boundary":
            print(f"direct energy      {_fmt(res.energy)}")
            red = boundary_reduction(patch, (r_faces, r_cells), "Hdiv", p)
            checks.append(("restricted-admissible",
                           max(red["restricted_audit"].values()) <= 1e-9,
                           max(red["restricted_audit"].values())))
            print(f"restricted energy  {_fmt(red['restricted_energy'])}")
            print(f"symmetrized energy {_fmt(red['sym_result'].energy)}")

    _print_checks(checks)
    print(f"energy {_fmt(energy)}")
    if all(ok for _, ok, _ in checks):
        return 0
    return _fail({"status": "constraint-violation",
                  "checks": [[n, bool(ok), d] for n, ok, d in checks]})


def _print_checks(checks):
    for name, ok, defect in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name} (defect {defect:.3e})")


def _parse_prange(text):
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def cmd_stability_sweep(args):
    from .families import (fixed_h1_data, fixed_hdiv_data, named_family)
    from .extension import stability_ratio

    patch = named_family(args.family)
    setting = "H1" if args.setting == "h1" else "Hdiv"
    lines = ["p,setting,energy_p,energy_proxy,ratio,proxy_convergence,gamma"]
    rows = []
    for p in _parse_prange(args.p):
        if setting == "H1":
            data = fixed_h1_data(patch, p, seed=args.seed)
        else:
            data = fixed_hdiv_data(patch, p, seed=args.seed)
        row = stability_ratio(patch, data, p, setting,
                              overkill_delta=args.delta)
        rows.append(row)
        lines.append(",".join([str(p), setting, _fmt(row["energy_p"]),
                               _fmt(row["energy_proxy"]), _fmt(row["ratio"]),
                               _fmt(row["proxy_convergence"]),
                               _fmt(row["gamma"])]))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if not all(np.isfinite(row["ratio"]) for row in rows):
        return _fail({"status": "non-finite-ratio"})
    if not all(row["converged"] for row in rows):
        return _fail({"status": "proxy-unconverged",
                      "p": [row["p"] for row in rows if not row["converged"]]})
    return 0


def cmd_estimate(args):
    from .meshio import read_bundle
    from .estimator import (broken_error, efficiency_report, error_bound,
                            reconstruct)

    problem, u_h, exact = read_bundle(args.bundle)
    rec = reconstruct(problem, u_h, workers=args.workers)
    bound = error_bound(problem, u_h, rec)
    out = {
        "schema": SCHEMA_ESTIMATE,
        "eta": bound.eta,
        "eta_augmented": bound.eta_augmented,
        "jump_term": bound.jump_term_uh,
        "audits": {k: float(v) for k, v in rec.audits.items()},
        "error": None,
        "effectivity": None,
    }
    err_K = None
    eff = None
    if exact is not None:
        eff = efficiency_report(problem, u_h, rec, exact["grad"],
                                exact["degree"], exact["value"])
        out["error"] = eff.error
        out["effectivity"] = eff.effectivity
    bad = [k for k, v in rec.audits.items() if v > 1e-8]
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.out_json:
        with open(args.out_json, "w") as fh:
            fh.write(text + "\n")
    print(text)
    if args.out_csv:
        lines = ["cell,eta_K,flux_K,potential_K,flux_ratio,potential_ratio"]
        for ci in range(problem.mesh.n_cells):
            fr = eff.flux_ratios[ci] if eff is not None else np.nan
            pr = eff.potential_ratios[ci] if eff is not None else np.nan
            lines.append(",".join([str(ci), _fmt(bound.eta_K[ci]),
                                   _fmt(bound.flux_K[ci]),
                                   _fmt(bound.potential_K[ci]),
                                   _fmt(fr), _fmt(pr)]))
        with open(args.out_csv, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    if bad:
        return _fail({"status": "reconstruction-audit-failed", "audits": bad})
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="patchext",
        description="Stable broken polynomial extensions on vertex patches "
                    "and equilibrated a posteriori error estimation.")
    sub = ap.add_subparsers(dest="command", required=True)

    sh = sub.add_parser("shelling", help="dump a patch shelling order as JSON")
    sh.add_argument("--mesh", required=True)
    sh.add_argument("--vertex", type=int, required=True)
    sh.add_argument("--seed", type=int, default=None)
    sh.add_argument("--out")
    sh.add_argument("--config")
    sh.set_defaults(func=cmd_shelling)

    pc = sub.add_parser("patch-check",
                        help="compatibility and constraint verification on "
                             "one vertex patch")
    pc.add_argument("--mesh", required=True)
    pc.add_argument("--vertex", type=int, required=True)
    pc.add_argument("--setting", choices=["h1", "hdiv"], default="h1")
    pc.add_argument("--degree", type=int, default=2)
    pc.add_argument("--seed", type=int, default=None)
    pc.add_argument("--data", help="face-coefficient file instead of "
                                   "generated data (h1 only)")
    pc.add_argument("--boundary", action="store_true",
                    help="also run the flatten/symmetrize/restrict path")
    pc.add_argument("--config")
    pc.set_defaults(func=cmd_patch_check)

    sw = sub.add_parser("stability-sweep",
                        help="discrete vs overkill-proxy energy ratios")
    sw.add_argument("--p", required=True, help="range like 1..4 or list 1,2,3")
    sw.add_argument("--setting", choices=["h1", "hdiv"], required=True)
    sw.add_argument("--family", choices=["regular", "distorted", "half"],
                    default="regular")
    sw.add_argument("--delta", type=int, default=None)
    sw.add_argument("--seed", type=int, default=None)
    sw.add_argument("--out")
    sw.add_argument("--config")
    sw.set_defaults(func=cmd_stability_sweep)

    es = sub.add_parser("estimate",
                        help="guaranteed error bound for a problem bundle")
    es.add_argument("--bundle", required=True)
    es.add_argument("--workers", type=int, default=None)
    es.add_argument("--out-json")
    es.add_argument("--out-csv")
    es.add_argument("--config")
    es.set_defaults(func=cmd_estimate)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    cfg = _load_config(getattr(args, "config", None))
    # precedence: CLI flag > config file > default
    if getattr(args, "seed", None) is None:
        args.seed = int(cfg.get("seed", _default_seed()))
    if getattr(args, "delta", None) is None:
        args.delta = int(cfg.get("delta", 6))
    if getattr(args, "workers", None) is None:
        args.workers = int(cfg.get("workers", 1))
    try:
        return args.func(args)
    except PatchextError as exc:
        diag = {"status": "error", "type": type(exc).__name__,
                "message": str(exc)}
        if isinstance(exc, IncompatibleData) and exc.defect is not None:
            diag["defect"] = exc.defect
        return _fail(diag)


if __name__ == "__main__":
    sys.exit(main())
