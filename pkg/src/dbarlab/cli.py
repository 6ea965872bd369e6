"""Command-line front end.

Parses the weight DSL and run flags, hands the work to the library
modules, and writes three artifacts into the output directory:

    report.json   verdicts and numbers, with the tolerances that produced them
    data.csv      plot series (ladders, sigma vs k, C_eps vs level)
    summary.txt   a short human-readable account

Outputs are deterministic for a fixed (config, seed) pair and are written
atomically (temp file + rename).  The CLI computes nothing itself; every
number in the report comes out of a library call.

Exit codes: 0 success, 2 bad configuration, 3 numerical failure,
4 inconclusive verdict while --strict is set.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INCONCLUSIVE = 4

TASKS = ("check-weight", "assemble", "spectrum", "oracle", "study")


def _apply_thread_cap():
    """Honor DBARLAB_THREADS before numpy first loads a BLAS."""
    cap = os.environ.get("DBARLAB_THREADS")
    if not cap:
        return
    try:
        int(cap)
    except ValueError:
        raise ConfigError(f"DBARLAB_THREADS={cap!r} is not an integer")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)


class ConfigError(Exception):
    pass


def _build_parser():
    top = argparse.ArgumentParser(
        prog="dbarlab",
        description="weighted d-bar laboratory: checks, assembly, spectra, studies",
    )
    sub = top.add_subparsers(dest="task", metavar="{%s}" % ",".join(TASKS))

    def common(p):
        p.add_argument("--weight", required=True,
                       help="preset name or DSL string, e.g. 'poly: x1^4 + y1^4'")
        p.add_argument("--n", type=int, default=1, choices=(1, 2),
                       help="complex dimension (default 1)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0,
                       help="seed recorded in every artifact (default 0)")
        p.add_argument("--strict", action="store_true",
                       help="exit 4 when the verdict is inconclusive")

    def gridded(p):
        p.add_argument("--R", type=float, default=6.0, help="box half-width")
        p.add_argument("--h", type=float, default=0.1, help="grid spacing")

    p = sub.add_parser("check-weight", help="asymptotic Levi and Rellich conditions")
    common(p)
    p.add_argument("--theta", type=float, default=0.5,
                   help="weight on |grad|^2 in the Rellich quantity")
    p.add_argument("--eps", default="1.0", help="Rellich epsilon")

    p = sub.add_parser("assemble", help="assemble operators and export them")
    common(p)
    gridded(p)

    p = sub.add_parser("spectrum", help="Ritz values and solution singular values")
    common(p)
    gridded(p)
    p.add_argument("--count", type=int, default=8, help="values requested")
    p.add_argument("--lambda-cap", type=float, default=1.5, dest="lambda_cap",
                   help="report how many Ritz values sit at or below this")
    p.add_argument("--tol", type=float, default=1e-8, help="solver tolerance")

    p = sub.add_parser("oracle", help="quadrature moments and exact sigma table")
    common(p)
    p.add_argument("--kmax", "--count", type=int, default=40, dest="kmax",
                   help="largest monomial degree tabulated (default 40)")
    p.add_argument("--tol", type=float, default=1e-10,
                   help="tail-bound tolerance echoed into the report")

    p = sub.add_parser("study", help="compactness dichotomy across a grid ladder")
    common(p)
    p.add_argument("--ladder", required=True,
                   help="comma list of R values, or R:h pairs, e.g. '6,8,10' or '4:0.1,5:0.05'")
    p.add_argument("--h", type=float, default=0.1,
                   help="spacing for ladder entries given without ':h'")
    p.add_argument("--eps", default="0.5",
                   help="comma list of epsilons for the compactness constant")
    p.add_argument("--lambda-cap", type=float, default=1.5, dest="lambda_cap")
    p.add_argument("--count", type=int, default=8, help="sigma values per level")
    return top


# ------------------------------------------------------------ serialization


def _plain(obj):
    """Recursively coerce library results to JSON-safe builtins."""
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _atomic_write(path, text):
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_artifacts(out_dir, report, rows, summary_lines):
    os.makedirs(out_dir, exist_ok=True)
    report_text = json.dumps(_plain(report), indent=2, sort_keys=True) + "\n"
    _atomic_write(os.path.join(out_dir, "report.json"), report_text)

    buf = []
    if rows:
        header = list(rows[0].keys())
        buf.append(",".join(header))
        for row in rows:
            buf.append(",".join(_csv_cell(row[k]) for k in header))
    _atomic_write(os.path.join(out_dir, "data.csv"), "\n".join(buf) + "\n")

    _atomic_write(os.path.join(out_dir, "summary.txt"),
                  "\n".join(summary_lines) + "\n")


def _csv_cell(value):
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if "," in text or '"' in text:
        text = '"' + text.replace('"', '""') + '"'
    return text


def _base_report(args, extra_config):
    config = {"task": args.task, "weight": args.weight, "n": args.n,
              "seed": args.seed}
    config.update(extra_config)
    return {"config": config, "seed": args.seed}


def _parse_weight_arg(args):
    from .weights import WeightParseError, parse_weight, preset_weight

    text = args.weight
    try:
        if ":" in text:
            return parse_weight(text, n=args.n)
        return preset_weight(text, n=args.n)
    except WeightParseError as exc:
        raise ConfigError(str(exc))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"unknown weight {text!r}: {exc}")


def _parse_float_list(text, flag):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            out.append(float(part))
        except ValueError:
            raise ConfigError(f"{flag} entry {part!r} is not a number")
    if not out:
        raise ConfigError(f"{flag} is empty")
    return out


def _parse_ladder(text, default_h):
    levels = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            r_text, h_text = part.split(":", 1)
        else:
            r_text, h_text = part, None
        try:
            R = float(r_text)
            h = default_h if h_text is None else float(h_text)
        except ValueError:
            raise ConfigError(f"--ladder entry {part!r} is not R or R:h")
        levels.append((R, h))
    if len(levels) < 3:
        raise ConfigError("--ladder needs at least three levels")
    return levels


# ------------------------------------------------------------------- tasks


def _task_check_weight(args):
    from .conditions import (AsymptoticSamplingPlan, check_condition_star,
                             check_condition_star_star, check_rellich)

    eps = _parse_float_list(args.eps, "--eps")[0]
    weight = _parse_weight_arg(args)
    try:
        plan = AsymptoticSamplingPlan(theta=args.theta, eps=eps)
    except ValueError as exc:
        raise ConfigError(str(exc))
    reports = {
        "star": check_condition_star(weight, plan),
        "star_star": check_condition_star_star(weight, plan),
        "rellich": check_rellich(weight, plan),
    }

    report = _base_report(args, {"theta": args.theta, "eps": eps,
                                 "tau": plan.tau, "directions": plan.directions})
    rows = []
    summary = [f"weight {args.weight} (n={args.n})"]
    inconclusive = False
    for name, rep in reports.items():
        report[name] = {
            "verdict": rep.verdict,
            "witness": rep.witness,
            "notes": rep.notes,
            "leading_terms": [
                {"direction": list(t.direction), "degree": t.degree,
                 "coefficient": float(t.coefficient)}
                for t in rep.leading_terms[:8]
            ],
        }
        inconclusive |= rep.verdict == "inconclusive"
        summary.append(f"  {name}: {rep.verdict}")
        for shell in rep.shells:
            rows.append({"series": name, "radius": float(shell.radius),
                         "value": float(shell.minimum)})
    summary.append(f"seed {args.seed}")
    code = EXIT_INCONCLUSIVE if (inconclusive and args.strict) else EXIT_OK
    return report, rows, summary, code


def _task_assemble(args):
    from .operators import assemble_box, assemble_dbar, operator_to_matrix_market
    from .space import build_space

    weight = _parse_weight_arg(args)
    space = build_space(weight, R=args.R, h=args.h)
    exported = {}
    os.makedirs(args.out, exist_ok=True)
    targets = [("dbar0", assemble_dbar(space, 0))]
    if args.n == 2:
        targets.append(("dbar1", assemble_dbar(space, 1)))
    targets.append(("box1", assemble_box(space, 1).matrix))
    for name, matrix in targets:
        path = os.path.join(args.out, f"{name}.mtx")
        operator_to_matrix_market(matrix, path)
        exported[name] = {"path": os.path.basename(path),
                          "shape": list(matrix.shape), "nnz": int(matrix.nnz)}

    report = _base_report(args, {"R": args.R, "h": args.h})
    report["space"] = {"npts": space.npts, "m": space.m,
                      "boundary_ratio": float(space.boundary_ratio)}
    report["operators"] = exported
    rows = [{"series": name, "rows": meta["shape"][0],
             "cols": meta["shape"][1], "value": meta["nnz"]}
            for name, meta in exported.items()]
    summary = [f"assembled {len(exported)} operators on {space.m}^{2*args.n} nodes",
               *(f"  {k}: {v['shape'][0]}x{v['shape'][1]}, nnz {v['nnz']}"
                 for k, v in exported.items()),
               f"seed {args.seed}"]
    return report, rows, summary, EXIT_OK


def _task_spectrum(args):
    import numpy as np

    from .space import build_space
    from .spectral import smallest_eigenpairs, solution_singular_values

    np.random.seed(args.seed)
    weight = _parse_weight_arg(args)
    space = build_space(weight, R=args.R, h=args.h)
    eig = smallest_eigenpairs(space, count=args.count, tol=args.tol)
    ritz, residuals = eig.values, eig.residuals
    sv = solution_singular_values(space, count=args.count)
    below = int(np.count_nonzero(ritz <= args.lambda_cap))

    report = _base_report(args, {"R": args.R, "h": args.h, "count": args.count,
                                 "lambda_cap": args.lambda_cap, "tol": args.tol})
    report["ritz"] = {"values": ritz, "residuals": residuals,
                      "count_below_cap": below}
    report["singular"] = {"sigmas": sv.sigmas, "mus": sv.mus,
                          "kernel_dim": sv.kernel_dim,
                          "edge_rejected": sv.edge_rejected,
                          "inconclusive": sv.inconclusive, "note": sv.note}
    rows = [{"series": "ritz", "k": i, "value": float(v)}
            for i, v in enumerate(ritz)]
    rows += [{"series": "sigma", "k": i, "value": float(s)}
             for i, s in enumerate(sv.sigmas)]
    summary = [
        f"spectrum of {args.weight} (n={args.n}, R={args.R}, h={args.h})",
        f"  ritz values at or below {args.lambda_cap}: {below}",
        "  sigma: " + " ".join(f"{s:.6f}" for s in sv.sigmas[:6]),
        f"  kernel dim {sv.kernel_dim}, inconclusive {sv.inconclusive}",
        f"seed {args.seed}",
    ]
    code = EXIT_INCONCLUSIVE if (sv.inconclusive and args.strict) else EXIT_OK
    return report, rows, summary, code


def _task_oracle(args):
    from .oracle import decay_exponent_fit, oracle_singular_values, radial_moments

    weight = _parse_weight_arg(args)
    table = radial_moments(weight, k_max=args.kmax)
    sv = oracle_singular_values(table)
    fit = None
    if args.kmax >= 40:
        # sigma_k needs the k+1 moment, so the sigma table stops at kmax-1
        fit = decay_exponent_fit(sv, k_lo=min(20, args.kmax // 2),
                                 k_hi=args.kmax - 1)

    report = _base_report(args, {"kmax": args.kmax, "dps": table.dps,
                                 "tol": args.tol})
    report["moments"] = {"k_max": table.k_max,
                         "max_quad_error": float(max(table.quad_errors)),
                         "max_tail_bound": float(max(table.tail_bounds))}
    report["sigma"] = {"values": [float(s) for s in sv.sigma]}
    if fit is not None:
        report["decay_fit"] = {"slope": fit.slope, "stderr": fit.stderr,
                               "k_lo": fit.k_lo, "k_hi": fit.k_hi}
    rows = [{"series": "moment", "k": k, "value": float(m)}
            for k, m in enumerate(table.moments)]
    rows += [{"series": "sigma", "k": k, "value": float(s)}
             for k, s in enumerate(sv.sigma)]
    summary = [f"oracle table for {args.weight}, k <= {args.kmax}",
               "  sigma head: " + " ".join(f"{float(s):.10f}" for s in sv.sigma[:4])]
    if fit is not None:
        summary.append(f"  decay exponent {fit.slope:.4f} over [{fit.k_lo},{fit.k_hi}]")
    summary.append(f"seed {args.seed}")
    return report, rows, summary, EXIT_OK


def _task_study(args):
    import numpy as np

    from .spectral import compactness_study

    np.random.seed(args.seed)
    weight = _parse_weight_arg(args)
    ladder = _parse_ladder(args.ladder, args.h)
    eps_list = _parse_float_list(args.eps, "--eps")
    result = compactness_study(weight, ladder, eps=eps_list,
                               lam_cap=args.lambda_cap, sigma_count=args.count)

    report = _base_report(args, {"ladder": [[R, h] for R, h in ladder],
                                 "eps": eps_list, "lambda_cap": args.lambda_cap,
                                 "count": args.count})
    report["verdict"] = result.verdict
    report["notes"] = result.notes
    levels = []
    rows = []
    for lv in result.levels:
        levels.append({"R": lv.R, "h": lv.h, "npts": lv.npts,
                       "count_below": lv.count_below, "sigmas": lv.sigmas,
                       "c_eps": lv.c_eps, "error": lv.error})
        if lv.error:
            continue
        rows.append({"series": "count_below", "R": lv.R, "h": lv.h,
                     "value": float(lv.count_below)})
        for i, s in enumerate(lv.sigmas):
            rows.append({"series": f"sigma_{i}", "R": lv.R, "h": lv.h,
                         "value": float(s)})
        for e, c in lv.c_eps.items():
            rows.append({"series": f"c_eps_{e}", "R": lv.R, "h": lv.h,
                         "value": float(c)})
    report["levels"] = levels

    summary = [f"compactness study of {args.weight} (n={args.n})",
               f"  ladder: " + ", ".join(f"R={R} h={h}" for R, h in ladder),
               f"  verdict: {result.verdict}"]
    if result.notes:
        summary.append(f"  notes: {result.notes}")
    summary.append(f"seed {args.seed}")
    errors = [lv for lv in result.levels if lv.error]
    if len(errors) == len(result.levels):
        for lv in errors:
            print(f"level R={lv.R} h={lv.h}: {lv.error}", file=sys.stderr)
        return report, rows, summary, EXIT_NUMERICAL
    code = EXIT_OK
    if result.verdict == "inconclusive" and args.strict:
        code = EXIT_INCONCLUSIVE
    return report, rows, summary, code


_RUNNERS = {
    "check-weight": _task_check_weight,
    "assemble": _task_assemble,
    "spectrum": _task_spectrum,
    "oracle": _task_oracle,
    "study": _task_study,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.task is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        _apply_thread_cap()
        runner = _RUNNERS[args.task]
        report, rows, summary, code = runner(args)
    except ConfigError as exc:
        print(f"dbarlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # numerical failures surface here
        from .operators import SolverError

        kind = "solver" if isinstance(exc, SolverError) else type(exc).__name__
        print(f"dbarlab: numerical failure ({kind}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    report["exit_code"] = code
    _write_artifacts(args.out, report, rows, summary)
    print("\n".join(summary))
    return code


if __name__ == "__main__":
    sys.exit(main())
