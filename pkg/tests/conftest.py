"""Shared helpers: ground-truth parameter vectors, small simulated problems,
and a finite-difference Jacobian reference."""

import numpy as np
import pytest

# pass/fail lines collected by the acceptance tests, echoed after the run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from imucal import (
    ParameterVector,
    ProblemOptions,
    RigScenario,
    apply_step,
    assemble,
    reference_extrinsics,
    reference_noise_spec,
    simulate,
)


def truth_vector(gt, num_samples):
    """ParameterVector holding the simulator's ground-truth states."""
    pv = ParameterVector.from_extrinsics(gt.extrinsics, num_samples)
    pv.alpha = np.array(gt.alpha, dtype=float)
    pv.ba = np.array(gt.accel_bias, dtype=float)
    pv.bg = np.array(gt.gyro_bias, dtype=float)
    return pv


def small_problem(
    num_imus=2,
    duration=0.3,
    dt=0.05,
    seed=11,
    noiseless=True,
    estimate_misalignment=True,
    misalignment_std_deg=0.0,
    bias_priors=True,
    sigma_a_alt=False,
):
    """Tiny simulated instance. Returns (problem, truth pv, series, gt)."""
    mis_std = np.radians(misalignment_std_deg) if misalignment_std_deg else None
    scenario = RigScenario(
        extrinsics=reference_extrinsics(num_imus),
        noise=None if noiseless else [reference_noise_spec(dt)] * num_imus,
        duration=duration,
        dt=dt,
        seed=seed,
        misalignment_sample_std_rad=mis_std,
    )
    series, gt = simulate(scenario)
    options = ProblemOptions(
        noise=[reference_noise_spec(dt)] * num_imus if noiseless else None,
        estimate_misalignment=estimate_misalignment,
        bias_priors=bias_priors,
        sigma_a_alt=sigma_a_alt,
    )
    problem = assemble(series, options)
    return problem, truth_vector(gt, series.num_samples), series, gt


def fd_jacobian(problem, pv, h=1e-6):
    """Dense central-difference Jacobian over the tangent parameterization."""
    layout = problem.layout
    base = problem.residual_vector(pv)
    jac = np.zeros((base.size, layout.dim))
    for j in range(layout.dim):
        delta = np.zeros(layout.dim)
        delta[j] = h
        r_plus = problem.residual_vector(apply_step(pv, delta, layout))
        delta[j] = -h
        r_minus = problem.residual_vector(apply_step(pv, delta, layout))
        jac[:, j] = (r_plus - r_minus) / (2.0 * h)
    return jac


def max_relative_jacobian_error(problem, pv, h=1e-6):
    """Max elementwise |analytic - FD| / max(1, |FD|) over the whole Jacobian."""
    analytic = problem.build_jacobian(pv).toarray()
    numeric = fd_jacobian(problem, pv, h=h)
    scale = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / scale))
