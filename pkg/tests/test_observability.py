"""Rank/identifiability analysis on constructed degenerate and healthy rigs."""

import numpy as np
import pytest

from conftest import truth_vector
from imucal import (
    ProblemOptions,
    assemble,
    check_rank,
    extrinsic_information,
    is_extrinsic_deficient,
    jacobian_block_dims,
)
from imucal.imu_model import ImuNoiseSpec
from imucal.simulator import (
    RigScenario,
    make_constant_acceleration_trajectory,
    make_single_axis_rotation_trajectory,
    reference_extrinsics,
    reference_noise_spec,
    simulate,
)
from imucal.solver import assemble_normal_equations, dense_normal_matrix


def build(num_imus, k_num, dt, trajectory=None, mis=False, priors=True, mis_std_deg=0.0,
          seed=3, noiseless=True):
    scenario = RigScenario(
        extrinsics=reference_extrinsics(num_imus),
        noise=None if noiseless else [reference_noise_spec(dt)] * num_imus,
        duration=k_num * dt,
        dt=dt,
        seed=seed,
        misalignment_sample_std_rad=np.radians(mis_std_deg) if mis_std_deg else None,
    )
    series, gt = simulate(scenario, trajectory)
    assert series.num_samples == k_num
    options = ProblemOptions(
        noise=[reference_noise_spec(dt)] * num_imus if noiseless else None,
        estimate_misalignment=mis,
        bias_priors=priors,
    )
    return assemble(series, options), truth_vector(gt, k_num), series


def test_constant_translation_is_deficient():
    traj = make_constant_acceleration_trajectory(1.5, 0.05)
    prob, pv, _ = build(2, 30, 0.05, traj)
    rep = check_rank(prob, pv, max_null_probe=40)
    assert rep.deficient
    assert rep.rank < rep.dim
    # without rotation the lever arm never enters: p columns lie in the null space
    col = prob.layout.col_p(1)
    proj = np.linalg.norm(rep.null_space[col: col + 3, :], axis=1)
    assert np.all(proj > 0.999)


def test_single_axis_rotation_is_deficient():
    traj = make_single_axis_rotation_trajectory(1.5, 0.05)
    prob, pv, _ = build(2, 30, 0.05, traj)
    rep = check_rank(prob, pv, max_null_probe=40)
    assert rep.deficient


def test_excited_pair_has_full_extrinsic_rank():
    prob, pv, _ = build(2, 30, 0.05, mis=False)
    rep = check_rank(prob, pv, max_null_probe=40)
    assert not rep.deficient
    # a single lever arm leaves the parallel component of each alpha_k free;
    # those are auxiliary directions only
    assert rep.rank_deficient == rep.aux_null_dim == 30
    for entry in rep.null_support:
        assert all(c.startswith("alpha[") for c in entry["components"])
    ext_cols = prob.layout.extrinsic_columns()
    proj = np.linalg.norm(rep.null_space[ext_cols, :])
    assert proj < 1e-6


def test_single_sample_is_deficient():
    prob, pv, _ = build(2, 1, 0.05, mis=False)
    rep = check_rank(prob, pv)
    assert rep.deficient
    assert rep.dim == 21
    assert rep.rank < 21


def test_flat_family_matches_prior_switch():
    # without the initial-bias priors the problem carries an exact
    # 6-dimensional auxiliary flat family; the priors remove it
    prob, pv, _ = build(4, 20, 0.05, mis=True, mis_std_deg=1.0, priors=False)
    rep = check_rank(prob, pv)
    assert rep.rank_deficient == 6
    assert rep.aux_null_dim == 6
    assert not rep.deficient
    prob, pv, _ = build(4, 20, 0.05, mis=True, mis_std_deg=1.0, priors=True)
    rep = check_rank(prob, pv)
    assert rep.rank == rep.dim
    assert rep.rank_deficient == 0


def test_two_imu_misalignment_continuum_detected():
    # with only two IMUs and misalignment estimation on, rotating both
    # misalignments about the lever direction is cost-free: extrinsic-affecting
    prob, pv, _ = build(2, 30, 0.05, mis=True, mis_std_deg=1.0)
    rep = check_rank(prob, pv, max_null_probe=40)
    assert rep.deficient


def test_rank_invariant_to_common_noise_rescaling():
    prob, pv, series = build(3, 15, 0.05, mis=False)
    r1 = check_rank(prob, pv)
    spec = reference_noise_spec(0.05)
    doubled = ImuNoiseSpec(spec.sigma_a * 2, spec.sigma_g * 2, spec.sigma_ba * 2,
                           spec.sigma_bg * 2, spec.dt)
    prob2 = assemble(series, ProblemOptions(noise=[doubled] * 3, estimate_misalignment=False))
    r2 = check_rank(prob2, pv)
    assert r1.rank == r2.rank
    assert r1.deficient == r2.deficient


def test_non_finite_inputs_rejected():
    prob, pv, series = build(2, 5, 0.05)
    pv_bad = pv.copy()
    pv_bad.alpha[0, 0] = np.nan
    with pytest.raises(ValueError):
        check_rank(prob, pv_bad)
    series.accel[2, 1, 0] = np.nan
    with pytest.raises(ValueError):
        assemble(series, ProblemOptions(noise=[reference_noise_spec(0.05)] * 2))


def test_extrinsic_information_matches_dense_schur():
    prob, pv, _ = build(3, 12, 0.05, mis=True, mis_std_deg=1.0, noiseless=False, seed=9)
    ne = assemble_normal_equations(prob, pv)
    h_mat, _ = dense_normal_matrix(ne)
    go = prob.layout.global_offset
    htt, htg, hgg = h_mat[:go, :go], h_mat[:go, go:], h_mat[go:, go:]
    schur = hgg - htg.T @ np.linalg.solve(htt, htg)
    expected = np.linalg.eigvalsh(schur)
    info = extrinsic_information(prob, pv)
    assert np.max(np.abs(info["eigenvalues"] - expected)) / expected[-1] < 1e-8
    assert info["labels"][:3] == ["p[n=1].x", "p[n=1].y", "p[n=1].z"]
    assert len(info["labels"]) == 6 * 2 + 3 * 3
    assert info["min_eigenvalue"] > 0.0
    assert not is_extrinsic_deficient(info["eigenvalues"])


def test_extrinsic_information_flags_zero_information():
    traj = make_constant_acceleration_trajectory(1.5, 0.05)
    prob, pv, _ = build(2, 30, 0.05, traj)
    info = extrinsic_information(prob, pv)
    assert info["min_eigenvalue"] < 1e-6 * info["max_eigenvalue"]
    assert is_extrinsic_deficient(info["eigenvalues"])


def test_jacobian_block_dims_paper_cases():
    assert jacobian_block_dims(1, 30, 0, True) == (12, 12)
    assert jacobian_block_dims(1, 30, 2, True) == (12, 15)
    assert jacobian_block_dims(30, 30, 0, True) == (6, 12)
    assert jacobian_block_dims(30, 30, 1, True) == (6, 15)
    # disabling misalignment removes its 3 columns
    assert jacobian_block_dims(1, 30, 1, False) == (12, 12)
    assert jacobian_block_dims(30, 30, 0, False) == (6, 9)
    with pytest.raises(ValueError):
        jacobian_block_dims(0, 30, 0, True)
    with pytest.raises(ValueError):
        jacobian_block_dims(31, 30, 0, True)
