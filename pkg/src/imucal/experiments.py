"""Simulation studies: accuracy, ablation, robustness, auxiliary states.

Every study is deterministic given its master seed: per-trial seeds are
expanded from it, the simulator consumes exactly one generator per trial,
and the initial-guess draw uses a second generator derived from the trial
seed.  Tables therefore reproduce byte-identically run to run.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import GuessSpec
from .metrics import Table, TrialResult, aux_rmse, pool_trials
from .problem import ProblemOptions, assemble, initial_guess
from .simulator import (
    ExtrinsicSet,
    RigScenario,
    Trajectory,
    reference_extrinsics,
    reference_noise_spec,
    simulate,
)
from .solver import SolverOptions, solve

GRID_POSITION_OFFSETS_MM = (0.0, 10.0, 20.0, 30.0)
GRID_ORIENTATION_OFFSETS_DEG = (0.0, 30.0, 60.0)
GRID_EXTRA_ORIENTATION_DEG = (90.0,)
# a grid cell trial counts as recovered when it converged this close to truth
GRID_SUCCESS_POSITION_MM = 5.0
GRID_SUCCESS_ORIENTATION_DEG = 0.5

STUDY_IDS = ("rmse_study", "misalign_ablation", "robustness_grid", "aux_states")


def trial_seeds(master_seed: int, count: int) -> list:
    """Independent per-trial seeds expanded deterministically from one seed."""
    state = np.random.SeedSequence(master_seed).generate_state(count, dtype=np.uint32)
    return [int(s) for s in state]


@dataclass
class TrialSetup:
    scenario: RigScenario
    trajectory: Trajectory | None = None
    problem_options: ProblemOptions = field(default_factory=ProblemOptions)
    solver_options: SolverOptions = field(default_factory=SolverOptions)
    guess_spec: GuessSpec = field(default_factory=GuessSpec)
    guess_extrinsics: ExtrinsicSet | None = None


def run_trial(setup: TrialSetup) -> TrialResult:
    """Simulate, build the problem, solve from a perturbed guess, score."""
    series, truth = simulate(setup.scenario, setup.trajectory)
    options = setup.problem_options
    if series.noise == [] and options.noise is None:
        # noiseless data still needs a whitening scale
        options = replace(
            options, noise=[reference_noise_spec(series.dt)] * series.num_imus
        )
    problem = assemble(series, options)
    if setup.guess_extrinsics is not None:
        guess_ext = setup.guess_extrinsics
    else:
        rng = np.random.default_rng([setup.scenario.seed, 1])
        guess_ext = setup.guess_spec.draw(truth.extrinsics, rng)
    x0 = initial_guess(series, guess_ext, options)
    pv, report = solve(problem, x0, setup.solver_options)
    return TrialResult(
        seed=setup.scenario.seed,
        truth=truth.extrinsics,
        estimate=pv.extrinsics(),
        status=report.status,
        iterations=report.iterations,
        final_cost=report.final_cost,
        wall_time=report.wall_time,
        aux_initial=aux_rmse(x0, truth),
        aux_final=aux_rmse(pv, truth),
    )


def run_trials(setups, jobs: int = 1) -> list:
    setups = list(setups)
    if jobs <= 1 or len(setups) <= 1:
        return [run_trial(s) for s in setups]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_trial, setups))


def study_scenario(
    seed: int,
    duration: float = 30.0,
    dt: float = 0.01,
    num_imus: int = 4,
    misalignment_std_deg: float = 1.0,
    noiseless: bool = False,
) -> RigScenario:
    """Reference-rig scenario used by all studies."""
    mis_std = math.radians(misalignment_std_deg)
    return RigScenario(
        extrinsics=reference_extrinsics(num_imus),
        noise=None if noiseless else [reference_noise_spec(dt)] * num_imus,
        duration=duration,
        dt=dt,
        seed=seed,
        misalignment_sample_std_rad=mis_std if mis_std > 0 else None,
    )


def rmse_study(
    seed: int = 0,
    trials: int = 20,
    durations=(10.0, 20.0, 30.0),
    num_imus: int = 4,
    dt: float = 0.01,
    misalignment_std_deg: float = 1.0,
    estimate_misalignment: bool = True,
    guess_spec: GuessSpec | None = None,
    solver_options: SolverOptions | None = None,
    jobs: int = 1,
) -> tuple[Table, dict]:
    """Extrinsic accuracy vs record duration, pooled over random trials."""
    guess_spec = guess_spec or GuessSpec()
    solver_options = solver_options or SolverOptions()
    options = ProblemOptions(estimate_misalignment=estimate_misalignment)
    durations = tuple(durations)
    seeds = trial_seeds(seed, trials * len(durations))
    rows = []
    results_by_duration = {}
    for i, duration in enumerate(durations):
        setups = [
            TrialSetup(
                scenario=study_scenario(
                    s, duration, dt, num_imus, misalignment_std_deg
                ),
                problem_options=options,
                solver_options=solver_options,
                guess_spec=guess_spec,
            )
            for s in seeds[i * trials:(i + 1) * trials]
        ]
        results = run_trials(setups, jobs)
        results_by_duration[duration] = results
        pooled = pool_trials(results)
        rows.append(
            [
                duration,
                pooled["trials"],
                pooled["converged"],
                pooled["position_mm"],
                pooled["orientation_deg"],
                pooled["misalignment_deg"],
                pooled["mean_iterations"],
            ]
        )
    table = Table(
        title="extrinsic accuracy vs record duration",
        columns=[
            "duration_s",
            "trials",
            "converged",
            "position_rmse_mm",
            "orientation_rmse_deg",
            "misalignment_rmse_deg",
            "mean_iterations",
        ],
        rows=rows,
        notes=[f"{num_imus} IMUs, seed {seed}"],
    )
    return table, results_by_duration


def misalign_ablation(
    seed: int = 0,
    trials: int = 10,
    duration: float = 30.0,
    dt: float = 0.01,
    num_imus: int = 4,
    misalignment_std_deg: float = 1.0,
    jobs: int = 1,
) -> tuple[Table, dict]:
    """Same simulated data solved with and without misalignment estimation."""
    seeds = trial_seeds(seed, trials)
    results = {}
    for label, enabled in (("enabled", True), ("disabled", False)):
        setups = [
            TrialSetup(
                scenario=study_scenario(s, duration, dt, num_imus, misalignment_std_deg),
                problem_options=ProblemOptions(estimate_misalignment=enabled),
            )
            for s in seeds
        ]
        results[label] = run_trials(setups, jobs)
    rows = []
    pooled = {}
    for label in ("enabled", "disabled"):
        pooled[label] = pool_trials(results[label])
        rows.append(
            [
                label,
                pooled[label]["trials"],
                pooled[label]["converged"],
                pooled[label]["position_mm"],
                pooled[label]["orientation_deg"],
            ]
        )
    rows.append(
        [
            "disabled/enabled",
            trials,
            "",
            pooled["disabled"]["position_mm"] / pooled["enabled"]["position_mm"],
            pooled["disabled"]["orientation_deg"] / pooled["enabled"]["orientation_deg"],
        ]
    )
    table = Table(
        title="misalignment estimation ablation",
        columns=["misalignment_estimation", "trials", "converged", "position_rmse_mm", "orientation_rmse_deg"],
        rows=rows,
        notes=[
            f"misalignment angles sampled with {misalignment_std_deg} deg std, seed {seed}",
            "last row is the error ratio disabled/enabled",
        ],
    )
    return table, results


def robustness_grid(
    seed: int = 0,
    per_cell: int = 5,
    duration: float = 10.0,
    dt: float = 0.01,
    num_imus: int = 4,
    misalignment_std_deg: float = 1.0,
    position_offsets_mm=GRID_POSITION_OFFSETS_MM,
    orientation_offsets_deg=GRID_ORIENTATION_OFFSETS_DEG + GRID_EXTRA_ORIENTATION_DEG,
    jobs: int = 1,
) -> tuple[Table, dict]:
    """Convergence from initial guesses offset by fixed amounts from truth."""
    cells = [(dp, dq) for dp in position_offsets_mm for dq in orientation_offsets_deg]
    seeds = trial_seeds(seed, per_cell)
    rows = []
    results = {}
    for dp_mm, dq_deg in cells:
        spec = GuessSpec(
            position_offset_m=dp_mm / 1000.0,
            orientation_offset_rad=math.radians(dq_deg),
            fixed_magnitude=True,
        )
        setups = [
            TrialSetup(
                scenario=study_scenario(s, duration, dt, num_imus, misalignment_std_deg),
                guess_spec=spec,
            )
            for s in seeds
        ]
        cell_results = run_trials(setups, jobs)
        results[(dp_mm, dq_deg)] = cell_results
        successes = sum(1 for r in cell_results if trial_recovered(r))
        pooled = pool_trials(cell_results)
        rows.append(
            [
                dp_mm,
                dq_deg,
                per_cell,
                pooled["converged"],
                successes,
                pooled["position_mm"],
                pooled["orientation_deg"],
            ]
        )
    table = Table(
        title="initial-guess robustness grid",
        columns=[
            "guess_offset_mm",
            "guess_offset_deg",
            "trials",
            "converged",
            "recovered",
            "position_rmse_mm",
            "orientation_rmse_deg",
        ],
        rows=rows,
        notes=[
            f"recovered = converged within {GRID_SUCCESS_POSITION_MM} mm and "
            f"{GRID_SUCCESS_ORIENTATION_DEG} deg of truth; {duration} s records, seed {seed}",
        ],
    )
    return table, results


def trial_recovered(result: TrialResult) -> bool:
    """Converged and landed at the true layout (not some distant minimum)."""
    if not result.converged:
        return False
    d = result.estimate.p - result.truth.p
    if np.sqrt(np.max(np.sum(d * d, axis=1))) * 1000.0 > GRID_SUCCESS_POSITION_MM:
        return False
    from .so3 import geodesic_angle

    ang = geodesic_angle(result.truth.q, result.estimate.q)
    return float(np.max(ang)) * 180.0 / math.pi <= GRID_SUCCESS_ORIENTATION_DEG


def aux_state_table(results, title: str = "auxiliary state recovery") -> Table:
    """Pooled auxiliary-state RMSE at the initial guess and at the solution."""
    results = list(results)
    rows = []
    units = {"alpha": "rad/s^2", "accel_bias": "m/s^2", "gyro_bias": "rad/s"}
    for key in ("alpha", "accel_bias", "gyro_bias"):
        init = float(np.sqrt(np.mean([r.aux_initial[key] ** 2 for r in results])))
        final = float(np.sqrt(np.mean([r.aux_final[key] ** 2 for r in results])))
        rows.append([key, units[key], init, final, init / final if final > 0 else float("inf")])
    return Table(
        title=title,
        columns=["state", "unit", "initial_rmse", "final_rmse", "improvement"],
        rows=rows,
        notes=[f"pooled over {len(results)} trials"],
    )


def aux_states_study(
    seed: int = 0,
    trials: int = 5,
    duration: float = 30.0,
    dt: float = 0.01,
    num_imus: int = 4,
    misalignment_std_deg: float = 1.0,
    jobs: int = 1,
) -> tuple[Table, list]:
    setups = [
        TrialSetup(scenario=study_scenario(s, duration, dt, num_imus, misalignment_std_deg))
        for s in trial_seeds(seed, trials)
    ]
    results = run_trials(setups, jobs)
    return aux_state_table(results), results


def run_study(study_id: str, seed: int = 0, trials: int | None = None, jobs: int = 1) -> list:
    """Run one named study; returns (name, Table) pairs for the writers."""
    if study_id == "rmse_study":
        table, _ = rmse_study(seed=seed, trials=trials or 20, jobs=jobs)
        return [("rmse_study", table)]
    if study_id == "misalign_ablation":
        table, _ = misalign_ablation(seed=seed, trials=trials or 10, jobs=jobs)
        return [("misalign_ablation", table)]
    if study_id == "robustness_grid":
        table, _ = robustness_grid(seed=seed, per_cell=trials or 5, jobs=jobs)
        return [("robustness_grid", table)]
    if study_id == "aux_states":
        table, _ = aux_states_study(seed=seed, trials=trials or 5, jobs=jobs)
        return [("aux_states", table)]
    raise ValueError(f"unknown study {study_id!r}; expected one of {', '.join(STUDY_IDS)}")
