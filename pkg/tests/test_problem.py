"""Residual functions, covariance weighting, layout, and analytic Jacobians."""

import numpy as np
import pytest

from conftest import max_relative_jacobian_error, small_problem, truth_vector
from imucal.imu_model import ImuNoiseSpec
from imucal.problem import (
    ParameterLayout,
    ParameterVector,
    ProblemOptions,
    apply_step,
    assemble,
    covariance_weights,
    initial_guess,
    residual_accel,
    residual_bias_walk,
    residual_gyro,
)
from imucal.simulator import (
    MeasurementSeries,
    RigScenario,
    reference_extrinsics,
    reference_noise_spec,
    simulate,
)
from imucal.so3 import QUAT_IDENTITY, exp_map, geodesic_angle, quat_from_axis_angle

Z = np.zeros(3)
IDQ = np.array(QUAT_IDENTITY)


def test_residual_accel_centripetal_oracle():
    # spinning about z, lever along x: predicted specific force is -w x (w x p)
    r = residual_accel(
        accel_n=Z, ba_n=Z, accel_0=Z, ba_0=Z,
        gyro_0=np.array([0.0, 0.0, 1.0]), bg_0=Z,
        p_n=np.array([0.1, 0.0, 0.0]), q_n=IDQ, mis_0=IDQ, alpha=Z,
    )
    assert np.allclose(r, [0.1, 0.0, 0.0], atol=1e-15)


def test_residual_accel_colocated_zero():
    a = np.array([1.0, 2.0, 3.0])
    r = residual_accel(a, Z, a, Z, Z, Z, Z, IDQ, IDQ, Z)
    assert np.allclose(r, 0.0)


def test_residual_accel_euler_term():
    r = residual_accel(
        accel_n=Z, ba_n=Z, accel_0=Z, ba_0=Z, gyro_0=Z, bg_0=Z,
        p_n=np.array([0.1, 0.0, 0.0]), q_n=IDQ, mis_0=IDQ,
        alpha=np.array([0.0, 0.0, 1.0]),
    )
    assert np.allclose(r, [0.0, -0.1, 0.0], atol=1e-15)


def test_residual_gyro_identity_zero():
    w = np.array([0.2, -0.1, 0.3])
    r = residual_gyro(w, Z, w, Z, IDQ, IDQ, IDQ)
    assert np.allclose(r, 0.0)


def test_residual_gyro_rotated_frame_consistency():
    # IMU n mounted 90 deg about z senses the base rate [0,0.1,0] as [0.1,0,0]
    z90 = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), np.pi / 2)
    r = residual_gyro(
        gyro_n=np.array([0.1, 0.0, 0.0]), bg_n=Z,
        gyro_0=np.array([0.0, 0.1, 0.0]), bg_0=Z,
        q_n=z90, mis_n=IDQ, mis_0=IDQ,
    )
    assert np.allclose(r, 0.0, atol=1e-15)


def test_residual_bias_walk():
    assert np.allclose(residual_bias_walk(np.array([1e-3, 0, 0]), Z), [1e-3, 0, 0])
    b1, b2 = np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.1, -0.2])
    assert np.allclose(residual_bias_walk(b1, b2), -residual_bias_walk(b2, b1))
    assert np.allclose(residual_bias_walk(b1, b1), 0.0)


def test_covariance_weight_arithmetic():
    spec = reference_noise_spec(dt=0.01)
    w = covariance_weights(spec)
    quartic = (1.6968e-4**2 / 0.01) ** 2
    assert w.accel_var == pytest.approx(2 * 2e-3**2 / 0.01 + quartic, rel=1e-12)
    assert w.accel_var == pytest.approx(8.0e-4, rel=1e-7)  # squared term is negligible
    assert w.gyro_var == pytest.approx(2 * 1.6968e-4**2 / 0.01, rel=1e-12)
    assert w.gyro_var == pytest.approx(5.758e-6, rel=1e-4)
    assert w.walk_accel_var == pytest.approx(3e-3**2 * 0.01, rel=1e-12)
    assert w.walk_gyro_var == pytest.approx(1.9393e-5**2 * 0.01, rel=1e-12)
    assert w.walk_gyro_var == pytest.approx(3.761e-12, rel=1e-4)
    # alternative accel variance drops the squared term
    w_alt = covariance_weights(spec, sigma_a_alt=True)
    assert w_alt.accel_var == pytest.approx(8.0e-4, rel=1e-12)
    assert w_alt.gyro_var == w.gyro_var


def test_covariance_weights_reject_bad_specs():
    spec = reference_noise_spec(dt=0.01)
    other = reference_noise_spec(dt=0.02)
    with pytest.raises(ValueError):
        covariance_weights(spec, other)
    zero_walk = ImuNoiseSpec(sigma_a=1e-3, sigma_g=1e-4, sigma_ba=0.0, sigma_bg=1e-5, dt=0.01)
    with pytest.raises(ValueError):
        covariance_weights(zero_walk)


def _series(duration=0.5, dt=0.01, num_imus=2, seed=3, noiseless=True, trajectory=None):
    scenario = RigScenario(
        extrinsics=reference_extrinsics(num_imus),
        noise=None if noiseless else [reference_noise_spec(dt)] * num_imus,
        duration=duration,
        dt=dt,
        seed=seed,
    )
    series, gt = simulate(scenario, trajectory)
    return series, gt, scenario


def test_initial_guess_constant_rate_gives_zero_alpha():
    series, _, scenario = _series()
    series.gyro[:, 0] = [0.1, -0.2, 0.3]
    pv = initial_guess(series, scenario.extrinsics)
    assert np.max(np.abs(pv.alpha)) == 0.0
    assert np.max(np.abs(pv.ba)) == 0.0
    assert np.max(np.abs(pv.bg)) == 0.0
    assert np.array_equal(pv.p, scenario.extrinsics.p)
    assert np.array_equal(pv.q, scenario.extrinsics.q)


def test_initial_guess_differentiates_base_gyro():
    series, _, scenario = _series(duration=2.0)
    t = series.t
    series.gyro[:, 0, :] = 0.0
    series.gyro[:, 0, 2] = np.sin(t)
    pv = initial_guess(series, scenario.extrinsics)
    # one-sided differencing of sin(t) tracks cos(t) to first order in dt
    err = np.abs(pv.alpha[:-1, 2] - np.cos(t[:-1]))
    assert np.max(err) < 0.6 * series.dt
    assert np.max(np.abs(pv.alpha[:, :2])) == 0.0


def test_initial_guess_needs_three_samples():
    series, _, scenario = _series()
    short = MeasurementSeries(
        t=series.t[:2], accel=series.accel[:2], gyro=series.gyro[:2],
        dt=series.dt, noise=series.noise,
    )
    with pytest.raises(ValueError):
        initial_guess(short, scenario.extrinsics)


def test_block_counts():
    series, _, _ = _series(duration=0.02, dt=0.01, num_imus=2)  # N=1, K=2
    assert series.num_samples == 2
    opts = ProblemOptions(noise=[reference_noise_spec(0.01)] * 2, bias_priors=False)
    assert assemble(series, opts).num_blocks == 8
    opts_p = ProblemOptions(noise=[reference_noise_spec(0.01)] * 2, bias_priors=True)
    assert assemble(series, opts_p).num_blocks == 12  # + 2 priors per IMU

    series, _, _ = _series(duration=60.0, dt=0.01, num_imus=4)  # N=3, K=6000
    assert series.num_samples == 6000
    opts = ProblemOptions(noise=[reference_noise_spec(0.01)] * 4, bias_priors=False)
    assert assemble(series, opts).num_blocks == 2 * 3 * 6000 + 2 * 4 * 5999


def test_assemble_rejects_empty_and_inconsistent():
    series, _, _ = _series(duration=0.1, dt=0.01)
    empty = MeasurementSeries(
        t=series.t[:0], accel=series.accel[:0], gyro=series.gyro[:0],
        dt=series.dt, noise=series.noise,
    )
    with pytest.raises(ValueError):
        assemble(empty, ProblemOptions(noise=[reference_noise_spec(0.01)] * 2))
    with pytest.raises(ValueError):
        assemble(series, ProblemOptions(noise=[reference_noise_spec(0.01)] * 3))


def test_parameter_dimension_formula():
    for n_imus, k_num, mis in [(2, 5, True), (2, 5, False), (4, 3, True)]:
        layout = ParameterLayout(n_imus, k_num, mis)
        n = n_imus - 1
        expected = 6 * n + (3 * n_imus if mis else 0) + 6 * n_imus * k_num + 3 * k_num
        assert layout.dim == expected


def test_layout_column_labels():
    layout = ParameterLayout(2, 3, True)
    assert layout.describe_col(0) == "alpha[k=0].x"
    assert layout.describe_col(layout.col_ba(1, 0) + 1) == "ba[k=1,n=0].y"
    assert layout.describe_col(layout.col_p(1)) == "p[n=1].x"
    assert layout.describe_col(layout.col_mis(0) + 2) == "mis[n=0].z"
    # base pose is the gauge: no p/dq columns exist for n=0
    labels = [layout.describe_col(j) for j in range(layout.dim)]
    assert not any(lab.startswith(("p[n=0]", "dq[n=0]")) for lab in labels)


def test_block_sparsity_pattern():
    prob, pv, _, _ = small_problem(num_imus=3, duration=0.2, dt=0.05)
    layout = prob.layout
    for block in prob.blocks():
        for name, col in block.columns.items():
            label = layout.describe_col(col)
            if "k=" in label:
                k_ref = int(label.split("k=")[1].split("]")[0].split(",")[0])
                assert k_ref in (block.k, block.k + 1)
            if "n=" in label:
                n_ref = int(label.split("n=")[1].split("]")[0])
                assert n_ref in (0, block.n)


def test_noiseless_residuals_vanish_at_truth():
    # the central simulator/problem consistency check
    prob, pv, _, _ = small_problem(num_imus=3, duration=0.5, dt=0.01,
                                   misalignment_std_deg=1.0, seed=21)
    r = prob.residual_vector(pv)
    assert np.max(np.abs(r)) < 1e-10
    from imucal import evaluate_cost

    assert evaluate_cost(prob, pv) < 1e-16


def test_whitening_scales_residual_rows():
    prob, pv, _, _ = small_problem(num_imus=2, duration=0.2, dt=0.05, seed=4)
    pv2 = pv.copy()
    pv2.ba[0, 1] += [1.0, 0.0, 0.0]  # perturb one bias to make r_a nonzero
    r = prob.residual_vector(pv2)
    blocks = prob.blocks()
    first_accel = next(i for i, b in enumerate(blocks) if b.kind == "accel" and b.k == 0)
    # r_a = (a~ - ba) - predicted: the +1 bias shift shows up whitened
    assert abs(r[3 * first_accel] - (-1.0) * blocks[first_accel].weight) < 1e-9


def test_apply_step_zero_is_identity():
    prob, pv, _, _ = small_problem(num_imus=2, duration=0.2, dt=0.05)
    out = apply_step(pv, np.zeros(prob.layout.dim), prob.layout)
    assert np.array_equal(out.p, pv.p)
    assert np.array_equal(out.q, pv.q)
    assert np.array_equal(out.alpha, pv.alpha)


def test_apply_step_right_composes_orientation():
    prob, pv, _, _ = small_problem(num_imus=2, duration=0.2, dt=0.05)
    layout = prob.layout
    delta = np.zeros(layout.dim)
    theta = np.array([0.02, -0.01, 0.03])
    delta[layout.col_dq(1): layout.col_dq(1) + 3] = theta
    out = apply_step(pv, delta, layout)
    from imucal.so3 import quat_multiply

    expected = quat_multiply(pv.q[0], exp_map(theta))
    assert geodesic_angle(out.q[0], expected) < 1e-12
    assert np.allclose(out.p, pv.p)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(77)
    for trial in range(4):
        mis_on = trial % 2 == 0
        prob, pv, _, _ = small_problem(
            num_imus=2 + trial % 2,
            duration=0.15,
            dt=0.05,
            seed=100 + trial,
            noiseless=False,
            estimate_misalignment=mis_on,
            misalignment_std_deg=1.0 if mis_on else 0.0,
        )
        # evaluate away from the zero-residual point
        delta = 1e-2 * rng.standard_normal(prob.layout.dim)
        pv_off = apply_step(pv, delta, prob.layout)
        assert max_relative_jacobian_error(prob, pv_off) < 1e-5


def test_prior_rows_pull_initial_biases():
    prob, pv, _, _ = small_problem(num_imus=2, duration=0.2, dt=0.05, bias_priors=True)
    pv2 = pv.copy()
    pv2.ba[0, 0] = [0.05, 0.0, 0.0]
    r = prob.residual_vector(pv2)
    blocks = prob.blocks()
    prior_rows = [i for i, b in enumerate(blocks) if b.kind.startswith("prior")]
    assert len(prior_rows) == 4  # accel+gyro prior per IMU
    vals = np.concatenate([r[3 * i: 3 * i + 3] for i in prior_rows])
    assert np.max(np.abs(vals)) > 0.0
    no_prior, _, _, _ = small_problem(num_imus=2, duration=0.2, dt=0.05, bias_priors=False)
    assert all(not b.kind.startswith("prior") for b in no_prior.blocks())
