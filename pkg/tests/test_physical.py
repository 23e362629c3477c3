import math

import numpy as np
import pytest

from sgflow.dynamics import RunOptions, run
from sgflow.measure import GridField, PhysicalDomain, lr_distance
from sgflow.physical import (
    PhysicalFlowField,
    TestFunctions,
    compose_inverse,
    fit_rotation_rate,
    inverse_F,
    mean_cell_diameter,
    measure_preservation_stat,
    pushforward_bins,
    reconstruct_F,
    z_field,
    z_residual,
)
from sgflow.vortex import exact_F, sample_patch

DISK = PhysicalDomain.disk(1.0, 96)


@pytest.fixture(scope="module")
def patch_run():
    mu = sample_patch(0.5, 0.0, 150, n_q=96, sweeps=8)
    return run(mu, 0.2, 0.02, DISK, RunOptions(tol=1e-9))


@pytest.fixture(scope="module")
def still_run():
    mu = sample_patch(1.0, 0.0, 150, n_q=96, sweeps=8)
    return run(mu, 0.2, 0.02, DISK, RunOptions(tol=1e-9))


def test_F0_close_to_identity(patch_run):
    F0 = reconstruct_F(patch_run, 0.0)
    assert np.array_equal(F0.values, patch_run.history[0].centroids[F0.cell_index])
    assert lr_distance(F0.as_grid_field(), GridField.identity(DISK), 1) <= mean_cell_diameter(patch_run)


def test_unit_patch_flow_stays_identity(still_run):
    diam = mean_cell_diameter(still_run)
    for t in still_run.saved_times():
        F = reconstruct_F(still_run, t).as_grid_field()
        assert lr_distance(F, GridField.identity(DISK), 1) <= 1.2 * diam


def test_patch_flow_rotates(patch_run):
    F = reconstruct_F(patch_run, 0.2).as_grid_field()
    exact = GridField(DISK, exact_F(DISK.nodes, 0.2, 0.5))
    assert lr_distance(F, exact, 2) < 0.15
    rate, times, angles = fit_rotation_rate(patch_run)
    assert rate == pytest.approx(-1.0, rel=0.05)
    assert angles[0] == pytest.approx(0.0, abs=0.01)
    assert len(times) == len(patch_run.history)


def test_inverse_composition(patch_run):
    diam = mean_cell_diameter(patch_run)
    for t in (0.0, 0.1, 0.2):
        comp = compose_inverse(patch_run, t)
        assert lr_distance(comp, GridField.identity(DISK), 1) <= 2 * diam
    Finv = inverse_F(patch_run, 0.2)
    assert np.array_equal(Finv.values, patch_run.history[0].centroids[Finv.cell_index])


def test_measure_preservation_of_exact_maps():
    fine = PhysicalDomain.disk(1.0, 200)
    I = GridField.identity(fine)
    assert measure_preservation_stat(I) == 0.0
    rot = GridField(fine, exact_F(fine.nodes, 0.37, 0.5))
    # node images of an exact rotation only move mass across bin edges at the lattice scale
    assert measure_preservation_stat(rot) <= 0.05


def test_measure_preservation_detects_compression():
    squash = GridField(DISK, 0.5 * DISK.nodes)
    assert measure_preservation_stat(squash) > 1.0


def test_weighted_measure_preservation_uses_weights():
    w = np.ones(len(DISK.nodes))
    I = GridField.identity(DISK)
    assert measure_preservation_stat(I, source_weight=w, target_weight=w) == 0.0
    assert measure_preservation_stat(I, source_weight=w, target_weight=2 * w) > 0.5


def test_pushforward_bins_total_mass():
    bins = pushforward_bins(DISK, DISK.nodes, DISK.weights, 5)
    assert bins.shape == (25,)
    assert bins.sum() == pytest.approx(DISK.quadrature_mass)
    assert 0.0 < bins[0] < bins[12]  # corner box only clips the disk


def test_z_field_at_zero(patch_run):
    Z = z_field(patch_run, 0.0)
    assert np.array_equal(Z.values, patch_run.history[0].points[reconstruct_F(patch_run, 0.0).cell_index])


def test_test_functions_vanish_on_boundary_and_horizon():
    tf = TestFunctions(2)
    assert len(tf.exponents()) == 6
    boundary = np.array([[1.0, 0.0], [0.0, -1.0], [math.sqrt(0.5), math.sqrt(0.5)]])
    assert np.allclose(tf.spatial(DISK, boundary), 0.0)
    assert TestFunctions.time(1.0, 1.0) == 0.0
    assert TestFunctions.time_derivative(1.0, 1.0) == 0.0
    rect = PhysicalDomain.rectangle(1.0, 0.5, 16)
    assert np.allclose(tf.spatial(rect, np.array([[1.0, 0.2], [0.3, 0.5]])), 0.0)


def test_z_residual_small_and_second_order():
    mu = sample_patch(0.5, 0.0, 80, n_q=64, sweeps=5)
    dom = PhysicalDomain.disk(1.0, 64)
    res = []
    for dt in (0.04, 0.02):
        st = run(mu, 0.4, dt, dom, RunOptions(tol=1e-11))
        res.append(z_residual(st))
    assert res[1] < 1e-3
    assert res[0] / res[1] > 3.0


def test_z_residual_needs_three_snapshots():
    mu = sample_patch(0.5, 0.0, 20, n_q=64, sweeps=0)
    st = run(mu, 0.01, 0.01, PhysicalDomain.disk(1.0, 64))
    with pytest.raises(ValueError):
        z_residual(st)


def test_flow_field_csv(tmp_path, patch_run):
    small = PhysicalDomain.disk(1.0, 12)
    F = reconstruct_F(patch_run, 0.1, small)
    assert isinstance(F, PhysicalFlowField)
    F.to_csv(tmp_path / "F.csv")
    lines = (tmp_path / "F.csv").read_text().splitlines()
    assert lines[0] == "x,y,Fx,Fy,cell_index"
    assert len(lines) == len(small.nodes) + 1


def test_frozen_flow_residual_matches_direct_sum():
    mu = sample_patch(0.5, 0.0, 30, n_q=48, sweeps=0)
    dom = PhysicalDomain.disk(1.0, 48)
    st = run(mu, 0.3, 0.1, dom, RunOptions(velocity="zero", tol=1e-10))
    res = z_residual(st, return_all=True)
    tf = TestFunctions()
    F0 = reconstruct_F(st, 0.0)
    g = tf.spatial(dom, dom.nodes) * dom.weights
    X, c = st.history[0].points, st.history[0].centroids
    drift = np.stack([-(X - c)[:, 1], (X - c)[:, 0]], axis=1)[F0.cell_index]
    expected = (g @ drift) * (0.3 / 4)  # int_0^T (1 - t/T)^3 dt = T/4
    assert np.allclose(res, expected, atol=1e-12)
