"""
Which motions make the layout observable?
=========================================

Lever arms only enter the accelerometer equations through angular
velocity and angular acceleration.  A rig that merely translates, or
spins at a constant rate about one axis, leaves parts of the layout
undetermined - and the rank check says so before any fitting happens.
"""
from imucal import (
    ProblemOptions,
    ParameterVector,
    RigScenario,
    assemble,
    check_rank,
    reference_extrinsics,
    reference_noise_spec,
    simulate,
)
from imucal.simulator import (
    make_constant_acceleration_trajectory,
    make_single_axis_rotation_trajectory,
)

dt = 0.05
options = ProblemOptions(noise=[reference_noise_spec(dt)] * 2,
                         estimate_misalignment=False)


def diagnose(name, trajectory):
    scenario = RigScenario(extrinsics=reference_extrinsics(2), noise=None,
                           duration=1.5, dt=dt, seed=1)
    series, truth = simulate(scenario, trajectory)
    problem = assemble(series, options)
    pv = ParameterVector.from_extrinsics(truth.extrinsics, series.num_samples)
    report = check_rank(problem, pv)
    verdict = "DEFICIENT" if report.deficient else "fully determined"
    print(f"{name:28s} rank {report.rank}/{report.dim}  -> {verdict}")
    for entry in report.null_support[:2]:
        print("   null direction touches:", ", ".join(entry["components"][:4]))
    return report


# pure translation: no rotation, the lever arm never shows up
diagnose("constant acceleration", make_constant_acceleration_trajectory(1.5, dt))

# constant spin about one axis: the component of p along the axis is free
diagnose("single-axis rotation", make_single_axis_rotation_trajectory(1.5, dt))

# the wobbling excitation trajectory used for calibration runs
diagnose("excitation (default)", None)

print("\ncalibrate only on motions the check calls fully determined;")
print("the command line equivalent is `imucal check --data <file>`")
