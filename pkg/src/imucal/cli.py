"""Command-line interface.

Subcommands: simulate, calibrate, check, evaluate, reproduce.

Exit codes: 0 success, 2 invalid input (arguments, config, file formats),
3 solver did not converge, 4 the problem is rank deficient and the
extrinsics are not trustworthy.  The seed is taken from --seed when
given, else the IMUCAL_SEED environment variable, else the config.
"""
from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import jsonschema
import numpy as np
import scipy

from . import __version__
from .dataio import (
    atomic_write_text,
    estimate_to_dict,
    extrinsics_from_config,
    guess_spec_from_config,
    load_config,
    noise_from_config,
    read_dataset,
    read_estimate,
    read_ground_truth,
    solver_options_from_config,
    scenario_from_config,
    trajectory_from_config,
    write_dataset,
    write_estimate,
    write_ground_truth,
)
from .experiments import STUDY_IDS, run_study
from .metrics import Table, aux_rmse_from_arrays, render_table
from .observability import check_rank, extrinsic_information, is_extrinsic_deficient
from .problem import ProblemOptions, assemble, initial_guess
from .simulator import reference_noise_spec, simulate
from .so3 import geodesic_angle
from .solver import STATUS_CONVERGED, solve

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NO_CONVERGENCE = 3
EXIT_RANK_DEFICIENT = 4

_FORMAT_EXT = {"text": "txt", "json": "json", "csv": "csv"}


def _resolve_seed(args, cfg: dict | None = None) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("IMUCAL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"IMUCAL_SEED must be an integer, got {env!r}")
    return cfg["seed"] if cfg is not None else 0


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _report_payload(report) -> dict:
    # timing stays out of files so outputs are reproducible byte for byte
    payload = report.to_dict()
    payload.pop("wall_time")
    return payload


def _whitening_noise(cfg: dict, series) -> list | None:
    """Noise specs used for whitening when the dataset carries none."""
    if series.noise:
        return None  # assemble() picks the dataset specs up itself
    probe = dict(cfg)
    probe["dt"] = series.dt
    probe["num_imus"] = series.num_imus
    specs = noise_from_config(probe)
    if specs is None:
        specs = [reference_noise_spec(series.dt)] * series.num_imus
    return specs


def _guess_extrinsics(args, cfg: dict, num_imus: int):
    if getattr(args, "guess", None):
        with open(args.guess, "r", encoding="utf-8") as fh:
            guess_cfg = json.load(fh)
        return extrinsics_from_config({"extrinsics": guess_cfg, "num_imus": num_imus})
    probe = dict(cfg)
    probe["num_imus"] = num_imus
    return extrinsics_from_config(probe)


def _load_problem(args, cfg: dict):
    series = read_dataset(args.data)
    options = ProblemOptions(
        estimate_misalignment=cfg["estimate_misalignment"],
        sigma_a_alt=cfg["sigma_a_alt"],
        noise=_whitening_noise(cfg, series),
    )
    problem = assemble(series, options)
    guess_ext = _guess_extrinsics(args, cfg, series.num_imus)
    x0 = initial_guess(series, guess_ext, options)
    return series, problem, x0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    scenario = scenario_from_config(cfg, seed)
    trajectory = trajectory_from_config(cfg)
    series, truth = simulate(scenario, trajectory)
    write_dataset(args.out, series)
    truth_path = args.truth or os.path.splitext(args.out)[0] + "_truth.json"
    write_ground_truth(truth_path, truth)
    print(
        f"wrote {series.num_samples} samples x {series.num_imus} IMUs "
        f"(seed {seed}) to {args.out}; ground truth in {truth_path}"
    )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    series, problem, x0 = _load_problem(args, cfg)
    pv, report = solve(problem, x0, solver_options_from_config(cfg))
    info = extrinsic_information(problem, pv)
    deficient = is_extrinsic_deficient(info["eigenvalues"])

    est = pv.extrinsics()
    payload = estimate_to_dict(
        est,
        report=_report_payload(report),
        aux_initial={"alpha": x0.alpha, "accel_bias": x0.ba, "gyro_bias": x0.bg},
        aux_final={"alpha": pv.alpha, "accel_bias": pv.ba, "gyro_bias": pv.bg},
        options={
            "estimate_misalignment": cfg["estimate_misalignment"],
            "sigma_a_alt": cfg["sigma_a_alt"],
            "extrinsic_deficient": deficient,
        },
    )
    if args.out:
        write_estimate(args.out, payload)

    rows = []
    for n in range(est.num_imus - 1):
        rows.append([n + 1, *[float(v) * 1000.0 for v in est.p[n]], *[float(v) for v in est.q[n]]])
    table = Table(
        title="estimated extrinsics (positions in mm, quaternions xyzw)",
        columns=["imu", "px_mm", "py_mm", "pz_mm", "qx", "qy", "qz", "qw"],
        rows=rows,
        notes=[
            f"status {report.status} after {report.iterations} iterations, "
            f"final cost {report.final_cost:.6g}"
        ],
    )
    sys.stdout.write(render_table(table, args.format))
    if args.verbose:
        print(f"solve wall time {report.wall_time:.3f} s")
        for entry in report.log:
            print(
                f"  it {entry['iteration']:3d}  cost {entry['cost']:.6e} -> "
                f"{entry['candidate_cost']:.6e}  damping {entry['damping']:.1e}  "
                f"{'accepted' if entry['accepted'] else 'rejected'}"
            )
        print(
            "extrinsic information eigenvalues: "
            f"min {info['min_eigenvalue']:.6g}, max {info['max_eigenvalue']:.6g}"
        )
    if deficient:
        print("warning: the data does not determine the extrinsics (rank deficient)", file=sys.stderr)
        return EXIT_RANK_DEFICIENT
    if report.status != STATUS_CONVERGED:
        print(f"warning: solver stopped with status {report.status}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_check(args) -> int:
    cfg = load_config(args.config)
    series, problem, x0 = _load_problem(args, cfg)
    dense_limit = 12_000_000
    if problem.num_rows * problem.layout.dim <= dense_limit:
        report = check_rank(problem, x0)
        deficient = report.deficient
        rows = [
            ["tangent dimension", report.dim],
            ["rank", report.rank],
            ["null directions (all)", report.rank_deficient],
            ["null directions (auxiliary only)", report.aux_null_dim],
            ["extrinsics determined", "no" if deficient else "yes"],
        ]
        notes = [f"threshold {report.threshold:.3e} (largest singular value {report.sigma_max:.6g})"]
        for entry in report.null_support:
            notes.append(
                "null direction on " + ", ".join(entry["components"])
                + f" (extrinsic mass {entry['extrinsic_mass']:.2e})"
            )
    else:
        info = extrinsic_information(problem, x0)
        deficient = is_extrinsic_deficient(info["eigenvalues"])
        rows = [
            ["tangent dimension", problem.layout.dim],
            ["extrinsic information min eigenvalue", f"{info['min_eigenvalue']:.6g}"],
            ["extrinsic information max eigenvalue", f"{info['max_eigenvalue']:.6g}"],
            ["extrinsics determined", "no" if deficient else "yes"],
        ]
        notes = ["problem too large for a full spectrum; marginal information test used"]
    table = Table(
        title="observability check",
        columns=["quantity", "value"],
        rows=rows,
        notes=notes,
    )
    _emit(render_table(table, args.format), args.out)
    return EXIT_RANK_DEFICIENT if deficient else EXIT_OK


def cmd_evaluate(args) -> int:
    est = read_estimate(args.estimate)
    truth = read_ground_truth(args.truth)
    ext = est["extrinsics"]
    if ext.num_imus != truth.extrinsics.num_imus:
        raise ValueError("estimate and ground truth disagree on the number of IMUs")
    rows = []
    for n in range(ext.num_imus - 1):
        dp = float(np.linalg.norm(ext.p[n] - truth.extrinsics.p[n])) * 1000.0
        dq = float(geodesic_angle(truth.extrinsics.q[n], ext.q[n])) * 180.0 / np.pi
        dm = float(geodesic_angle(truth.extrinsics.mis[n + 1], ext.mis[n + 1])) * 180.0 / np.pi
        rows.append([n + 1, dp, dq, dm])
    dm0 = float(geodesic_angle(truth.extrinsics.mis[0], ext.mis[0])) * 180.0 / np.pi
    notes = [f"base gyroscope misalignment error {dm0:.6g} deg"]
    for key in ("aux_initial", "aux_final"):
        if est.get(key) is not None:
            aux = est[key]
            rmse = aux_rmse_from_arrays(aux["alpha"], aux["accel_bias"], aux["gyro_bias"], truth)
            notes.append(
                f"{key} RMSE: alpha {rmse['alpha']:.6g} rad/s^2, "
                f"accel bias {rmse['accel_bias']:.6g} m/s^2, "
                f"gyro bias {rmse['gyro_bias']:.6g} rad/s"
            )
    table = Table(
        title="estimate vs ground truth",
        columns=["imu", "position_err_mm", "orientation_err_deg", "misalignment_err_deg"],
        rows=rows,
        notes=notes,
    )
    _emit(render_table(table, args.format), args.out)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    seed = _resolve_seed(args)
    os.makedirs(args.out, exist_ok=True)
    outputs = run_study(args.id, seed=seed, trials=args.trials, jobs=args.jobs)
    written = []
    for name, table in outputs:
        path = os.path.join(args.out, f"{name}.{_FORMAT_EXT[args.format]}")
        atomic_write_text(path, render_table(table, args.format))
        written.append(path)
    metadata = {
        "study": args.id,
        "seed": seed,
        "trials": args.trials,
        "jobs": args.jobs,
        "format": args.format,
        "outputs": [os.path.basename(p) for p in written],
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "versions": {
            "imucal": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }
    meta_path = os.path.join(args.out, "run_metadata.json")
    atomic_write_text(meta_path, json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    for path in written:
        print(f"wrote {path}")
    print(f"wrote {meta_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imucal",
        description="Multi-IMU extrinsic calibration: simulate, calibrate, check, evaluate, reproduce.",
    )
    parser.add_argument("--version", action="version", version=f"imucal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, fmt=True):
        if fmt:
            p.add_argument("--format", choices=("text", "json", "csv"), default="text")
        p.add_argument("--verbose", action="store_true")

    p_sim = sub.add_parser("simulate", help="simulate a rig recording to a dataset file")
    p_sim.add_argument("--config", help="JSON run configuration")
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--out", required=True, help="dataset CSV path")
    p_sim.add_argument("--truth", help="ground-truth JSON path (default: <out>_truth.json)")
    add_common(p_sim, fmt=False)
    p_sim.set_defaults(func=cmd_simulate)

    p_cal = sub.add_parser("calibrate", help="estimate extrinsics from a dataset")
    p_cal.add_argument("--data", required=True, help="dataset CSV path")
    p_cal.add_argument("--config", help="JSON run configuration")
    p_cal.add_argument("--guess", help="JSON initial extrinsic guess (p_mm + euler_xyz_deg or q)")
    p_cal.add_argument("--out", help="estimate JSON path")
    add_common(p_cal)
    p_cal.set_defaults(func=cmd_calibrate)

    p_chk = sub.add_parser("check", help="observability/rank check of a dataset")
    p_chk.add_argument("--data", required=True)
    p_chk.add_argument("--config")
    p_chk.add_argument("--guess")
    p_chk.add_argument("--out")
    add_common(p_chk)
    p_chk.set_defaults(func=cmd_check)

    p_eval = sub.add_parser("evaluate", help="compare an estimate against ground truth")
    p_eval.add_argument("--estimate", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--out")
    add_common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_rep = sub.add_parser("reproduce", help="run a named simulation study")
    p_rep.add_argument("--id", required=True, choices=STUDY_IDS)
    p_rep.add_argument("--seed", type=int)
    p_rep.add_argument("--trials", type=int)
    p_rep.add_argument("--jobs", type=int, default=1)
    p_rep.add_argument("--out", required=True, help="output directory")
    add_common(p_rep)
    p_rep.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (jsonschema.ValidationError, ValueError, OSError, json.JSONDecodeError) as exc:
        msg = getattr(exc, "message", None) or str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
