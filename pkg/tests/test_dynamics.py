import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgflow.dynamics import (
    CutoffProfile,
    J,
    RunOptions,
    bump,
    cutoff_H,
    dual_velocity,
    initial_state,
    inverse_flow,
    mollified_velocity,
    run,
    step,
)
from sgflow.measure import DiscreteMeasure, PhysicalDomain
from sgflow.vortex import sample_patch

DISK = PhysicalDomain.disk(1.0, 64)
H = DISK.h


def test_J_quarter_turn():
    assert np.array_equal(J([1.0, 0.0]), [0.0, 1.0])
    assert np.array_equal(J([[0.0, 2.0]]), [[-2.0, 0.0]])


def test_cutoff_cases():
    prof = CutoffProfile(R=2.0)
    X = np.array([[1.5, -1.9], [4.0, 0.0], [0.0, 0.0]])
    H_ = cutoff_H(X, prof)
    assert np.array_equal(H_[0], X[0])
    assert np.array_equal(H_[1], [0.0, 0.0])
    assert np.array_equal(H_[2], [0.0, 0.0])


@settings(max_examples=60)
@given(st.floats(0.1, 5), st.floats(-10, 10), st.floats(0, 1))
def test_cutoff_profile_is_monotone_and_bounded(R, s, ds):
    prof = CutoffProfile(R)
    a, b = prof.rho(abs(s)), prof.rho(abs(s) + ds)
    assert 0.0 <= b <= a <= 1.0


def test_cutoff_profile_is_c1_at_the_joins():
    prof = CutoffProfile(1.0)
    d = 1e-7
    for s in (1.0, 2.0):
        left = (prof.rho(s) - prof.rho(s - d)) / d
        right = (prof.rho(s + d) - prof.rho(s)) / d
        assert abs(left) < 1e-6 and abs(right) < 1e-6


def test_bump_support():
    assert bump(0.0, 0.5) == 1.0
    assert bump(0.5, 0.5) == 0.0 and bump(0.7, 0.5) == 0.0


def test_single_particle_velocity_is_quarter_turn():
    st_ = initial_state(DiscreteMeasure([[1.0, 0.0]], [math.pi]), DISK, 1.0)
    assert np.linalg.norm(st_.centroids[0]) < 1e-12
    assert np.allclose(dual_velocity(st_, 0), [0.0, 1.0], atol=1e-12)


def test_particle_at_origin_is_fixed():
    st_ = initial_state(DiscreteMeasure([[0.0, 0.0]], [math.pi]), DISK, 1.0)
    assert np.linalg.norm(dual_velocity(st_, 0)) < 1e-14
    after = step(st_, 0.1)
    assert np.max(np.abs(after.points)) < 1e-14


def test_single_particle_follows_circle_second_order():
    mu = DiscreteMeasure([[1.0, 0.0]], [math.pi])
    errs = []
    for dt in (0.1, 0.05):
        st_ = run(mu, 1.0, dt, DISK)
        errs.append(np.linalg.norm(st_.points[0] - [math.cos(1.0), math.sin(1.0)]))
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] > 3.5


@pytest.fixture(scope="module")
def patch_state():
    return initial_state(sample_patch(0.5, 0.0, 60, n_q=64, sweeps=3), DISK, 0.5, RunOptions(tol=1e-9))


def test_mollified_velocity_single_term_equals_dual(patch_state):
    X = patch_state.points
    gaps = np.linalg.norm(X[:, None] - X[None], axis=2) + np.eye(len(X)) * 10
    m = 1.01 / gaps.min()
    assert np.array_equal(mollified_velocity(patch_state, m), dual_velocity(patch_state))


def test_mollified_velocity_brute_force(patch_state):
    s = patch_state
    X, m, c = s.points, s.masses, s.centroids
    U = mollified_velocity(s, 1.0)
    for i in range(0, len(X), 7):
        w = np.array([m[j] * bump(np.linalg.norm(X[j] - X[i]), 1.0) for j in range(len(X))])
        ci = sum(w[j] * c[j] for j in range(len(X))) / w.sum()
        assert np.allclose(U[i], J(X[i] - ci), atol=1e-12)


def test_mollified_velocity_antisymmetric():
    mu = DiscreteMeasure([[0.5, 0.0], [-0.5, 0.0]], [math.pi / 2] * 2)
    st_ = initial_state(mu, DISK, 0.5)
    for m in (1.0, 3.0):
        U = mollified_velocity(st_, m)
        assert np.allclose(U[0], -U[1], atol=1e-12)


def test_T_zero_is_identity():
    mu = sample_patch(0.5, 0.0, 30, n_q=64, sweeps=0)
    st_ = run(mu, 0.0, 0.01, DISK)
    assert len(st_.history) == 1
    idx, pts = inverse_flow(st_, 0.0)
    assert np.array_equal(idx, np.arange(30))
    assert np.array_equal(pts, mu.points)


def test_run_saves_and_conserves_mass(tmp_path):
    mu = sample_patch(0.5, 0.0, 30, n_q=64, sweeps=0)
    st_ = run(mu, 0.1, 0.02, DISK, RunOptions(tol=1e-8, save_stride=2))
    assert np.allclose(st_.saved_times(), [0.0, 0.04, 0.08, 0.1])
    assert np.array_equal(st_.masses, mu.masses)
    assert st_.stats["solves"] == 1 + 2 * 5
    with pytest.raises(KeyError):
        st_.at(0.02)
    st_.to_csv(tmp_path / "traj.csv")
    lines = (tmp_path / "traj.csv").read_text().splitlines()
    assert lines[0] == "t,i,X1,X2,c1,c2,psi"
    assert len(lines) == 1 + 4 * 30
    assert st_.stats["max_speed"] <= st_.speed_bound()


def test_reversed_run_returns_home():
    mu = sample_patch(0.5, 0.0, 30, n_q=64, sweeps=0)
    fwd = run(mu, 0.2, 0.01, DISK, RunOptions(tol=1e-10))
    back = run(None, 0.2, 0.01, DISK, RunOptions(tol=1e-10, reverse=True), state=fwd)
    assert np.max(np.linalg.norm(back.points - mu.points, axis=1)) < 1e-4


def test_zero_velocity_model():
    mu = sample_patch(0.5, 0.0, 20, n_q=64, sweeps=0)
    st_ = run(mu, 0.05, 0.01, DISK, RunOptions(velocity="zero"))
    assert np.array_equal(st_.points, mu.points)


def test_options_validation():
    with pytest.raises(ValueError):
        RunOptions(velocity="bogus")
    with pytest.raises(ValueError):
        RunOptions(velocity="mollified")
    with pytest.raises(ValueError):
        run(None, -1.0, 0.1, DISK)


def test_patch_center_moves_along_circle():
    # sum_i m_i c_i is the first moment of the disk, which vanishes, so the mean obeys z' = J z
    mu = sample_patch(0.5, 0.0, 200, n_q=64, sweeps=3)
    st_ = initial_state(mu, DISK, 0.5, RunOptions(tol=1e-12))
    dt = 1e-2
    after = step(st_, dt)
    w = mu.masses / mu.masses.sum()
    z0 = w @ mu.points
    rot = np.array([[math.cos(dt), -math.sin(dt)], [math.sin(dt), math.cos(dt)]])
    assert np.linalg.norm(w @ after.points - rot @ z0) <= dt**3
