import math

import numpy as np
import pytest

from sgflow.dynamics import RunOptions, dual_velocity, run
from sgflow.errors import ZeroMassRegion
from sgflow.measure import DiscreteMeasure, PhysicalDomain, fsum
from sgflow.shallow import (
    HeightField,
    perp,
    solve_weighted_ot,
    sw_consistency_iterate,
    sw_dual_velocity,
    sw_reconstruct_F,
    sw_run,
    weighted_measure_preservation,
    weighted_pushforward_error,
)
from sgflow.transport import tessellate
from sgflow.vortex import sample_patch

DISK = PhysicalDomain.disk(1.0, 80)


def tent(domain):
    return HeightField.from_function(domain, lambda x: np.clip(1.0 - np.hypot(*x.T), 0.0, None))


def test_perp():
    assert np.array_equal(perp([1.0, 0.0]), [0.0, 1.0])
    assert np.array_equal(perp([[0.0, 0.0]]), [[0.0, 0.0]])


def test_height_validation():
    with pytest.raises(ValueError):
        HeightField(DISK, -np.ones(len(DISK.nodes)))
    with pytest.raises(ValueError):
        HeightField(DISK, np.ones(3))
    h = HeightField.constant(DISK, 2.0)
    assert h.mass() == pytest.approx(2 * DISK.quadrature_mass)
    assert h.convexity_defect() == 0.0


def test_single_particle_tent_centroid_at_origin():
    mu = DiscreteMeasure([[0.3, 0.2]], [1.0])
    h = tent(DISK)
    psi = solve_weighted_ot(DISK, h, mu)
    assert psi.tolist() == [0.0]
    tess = tessellate(DISK, mu, psi, density=h.values)
    assert np.linalg.norm(tess.cell_centroids[0]) < 1e-12


def test_two_symmetric_particles_split_weighted_mass():
    h = HeightField.from_function(DISK, lambda x: 1.0 + 0.5 * x[:, 0] ** 2 + x[:, 1] ** 2)
    mu = DiscreteMeasure([[-0.5, 0.1], [0.5, 0.1]], [1.0, 1.0])
    psi = solve_weighted_ot(DISK, h, mu, tol=1e-10)
    assert abs(psi[1] - psi[0]) < 1e-9
    right = fsum(DISK.weights * h.values * (DISK.nodes[:, 0] > 0))
    tess = tessellate(DISK, mu, psi, density=h.values)
    assert tess.cell_masses[1] == pytest.approx(right, abs=2 * DISK.h)


def test_zero_height_is_rejected():
    with pytest.raises(ZeroMassRegion):
        solve_weighted_ot(DISK, HeightField.constant(DISK, 0.0), DiscreteMeasure([[0, 0]], [1.0]))


def test_sw_velocity_cases():
    class S:
        points = np.array([[0.2, 0.3], [1.0, 0.0]])
        centroids = np.array([[0.2, 0.3], [0.0, 0.0]])

    U = sw_dual_velocity(S)
    assert np.array_equal(U[0], [0.0, 0.0])
    assert np.array_equal(U[1], [0.0, 1.0])
    assert np.array_equal(sw_dual_velocity(S, 1), [0.0, 1.0])


@pytest.fixture(scope="module")
def patch():
    return sample_patch(0.5, 0.0, 40, n_q=80, sweeps=3)


def test_unit_height_reproduces_incompressible_bitwise(patch):
    opts = RunOptions(tol=1e-8)
    inc = run(patch, 0.05, 0.01, DISK, opts)
    sw, heights = sw_run(patch, HeightField.constant(DISK, 1.0), DISK, 0.05, 0.01, opts)
    for a, b in zip(inc.history, sw.history):
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.centroids, b.centroids)
    assert np.array_equal(dual_velocity(inc), sw_dual_velocity(sw))
    assert len(heights) == len(sw.history)


def test_weighted_pushforward_at_start(patch):
    h = tent(DISK)
    psi = solve_weighted_ot(DISK, h, patch, tol=1e-9)
    assert weighted_pushforward_error(DISK, h, patch, psi) <= 1e-8


def test_weighted_flow_measure_preservation_frozen_height(patch):
    h = HeightField.constant(DISK, 1.0)
    state, heights = sw_run(patch, h, DISK, 0.04, 0.02, RunOptions(tol=1e-8))
    F = sw_reconstruct_F(state, 0.0)
    assert np.array_equal(F.cell_index, tessellate(DISK, patch, state.history[0].psi).assignment)
    assert weighted_measure_preservation(state, 0.04, h, heights[-1][1]) < 1.0


def test_consistency_converges_and_is_stationary(patch):
    res = sw_consistency_iterate(patch, DISK, tent(DISK), damping=1.0, max_outer=30, tol=1e-6)
    assert res.converged, res.status
    again = sw_consistency_iterate(patch, DISK, res.height, damping=1.0, max_outer=1, tol=1e-6, psi0=res.psi)
    assert again.changes[0] <= 1e-5
    assert abs(res.height.mass() - tent(DISK).mass()) <= 1e-12 * tent(DISK).mass()


def test_consistency_status_is_honest_on_adversarial_start(patch):
    # a narrow spike far from any consistent height
    spike = HeightField.from_function(DISK, lambda x: np.exp(-40 * np.sum((x - [0.6, 0.0]) ** 2, axis=1)))
    res = sw_consistency_iterate(patch, DISK, spike, damping=0.5, max_outer=3, tol=1e-12)
    assert not res.converged
    assert res.status.startswith("not converged") or res.status.startswith("transport solve failed")
    assert res.to_dict()["converged"] is False
    if len(res.changes) >= 3:
        assert isinstance(res.monotone_start, bool)


def test_consistent_height_has_convex_potential(patch):
    res = sw_consistency_iterate(patch, DISK, tent(DISK), damping=1.0, max_outer=30, tol=1e-8)
    assert res.height.convexity_defect() <= 1e-6


def test_damping_must_be_in_range(patch):
    with pytest.raises(ValueError):
        sw_consistency_iterate(patch, DISK, tent(DISK), damping=0.0)
