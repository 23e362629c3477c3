import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis.extra import numpy as hnp
from hypothesis import strategies as st

from sgflow.measure import (
    DiscreteMeasure,
    GridField,
    PhysicalDomain,
    fsum,
    lr_distance,
    pushforward_discrepancy,
    support_bound,
    total_mass,
)
from sgflow.vortex import sample_patch

DISK = PhysicalDomain.disk(1.0, 96)


def test_total_mass_single_particle():
    assert total_mass(DiscreteMeasure([[0.3, 0.1]], [math.pi])) == math.pi


def test_total_mass_patch_is_pi():
    mu = sample_patch(0.5, 0.0, 50, n_q=64, sweeps=0)
    assert abs(total_mass(mu) - math.pi) <= 1e-12


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_nonpositive_mass_rejected(bad):
    with pytest.raises(ValueError):
        DiscreteMeasure([[0, 0], [1, 0]], [1.0, bad])


def test_duplicates_are_separated_deterministically():
    a = DiscreteMeasure([[0.5, 0.5], [0.5, 0.5]], [1, 1])
    b = DiscreteMeasure([[0.5, 0.5], [0.5, 0.5]], [1, 1])
    assert not np.array_equal(a.points[0], a.points[1])
    assert np.array_equal(a.points, b.points)
    assert np.linalg.norm(a.points[0] - a.points[1]) < 1e-8


def test_R0_must_cover_points():
    with pytest.raises(ValueError):
        DiscreteMeasure([[2.0, 0.0]], [1.0], R0=1.0)


def test_json_round_trip(tmp_path):
    mu = DiscreteMeasure([[0.1, 0.2], [0.3, -0.4]], [0.5, 1.5], R0=2.0)
    mu.to_json(tmp_path / "mu.json")
    back = DiscreteMeasure.from_json(tmp_path / "mu.json")
    assert np.array_equal(back.points, mu.points)
    assert np.array_equal(back.masses, mu.masses)
    assert back.R0 == 2.0


@pytest.mark.parametrize("R0,S,T,expected", [(1, 1, 0, 1), (1, 1, math.log(2), 3), (0, 0, 5.0, 0)])
def test_support_bound(R0, S, T, expected):
    assert support_bound(R0, S, T) == pytest.approx(expected, abs=1e-14)


def test_domain_quadrature():
    assert abs(DISK.quadrature_mass - math.pi) < 4 * DISK.h
    rect = PhysicalDomain.rectangle(1.0, 0.5, n_q=40)
    # lattice lines do not align with the rectangle edges: error is at most perimeter x h
    assert abs(rect.quadrature_mass - 2.0) <= 6.0 * rect.h
    assert PhysicalDomain.from_dict(DISK.to_dict()) == DISK


def test_lr_distance_identity_zero():
    I = GridField.identity(DISK)
    assert lr_distance(I, I, 1) == 0.0
    assert lr_distance(I, I, 2) == 0.0


@pytest.mark.parametrize("theta", [0.3, 1.0, math.pi])
def test_lr_distance_rotation_closed_form(theta):
    c, s = math.cos(theta), math.sin(theta)
    R = GridField(DISK, DISK.nodes @ np.array([[c, -s], [s, c]]).T)
    expected = 2 * abs(math.sin(theta / 2)) * math.sqrt(math.pi / 2)
    assert lr_distance(R, GridField.identity(DISK), 2) == pytest.approx(expected, rel=0.02)


def test_lr_distance_constant_offset_r1():
    d = np.array([0.3, -0.4])
    shifted = GridField(DISK, DISK.nodes + d)
    assert lr_distance(shifted, GridField.identity(DISK), 1) == pytest.approx(math.pi * 0.5, rel=0.01)


def test_lr_distance_rejects_small_r():
    I = GridField.identity(DISK)
    with pytest.raises(ValueError):
        lr_distance(I, I, 0.5)


def test_pushforward_identity_and_constant():
    small = PhysicalDomain.disk(1.0, 24)
    grid_measure = DiscreteMeasure(small.nodes, small.weights)
    assert pushforward_discrepancy(GridField.identity(small), small.weights, grid_measure) <= 1e-12
    x1 = np.array([0.2, 0.1])
    const = GridField(small, np.tile(x1, (len(small.nodes), 1)))
    one = DiscreteMeasure([x1], [small.quadrature_mass])
    assert pushforward_discrepancy(const, small.weights, one) <= 1e-12


def test_pushforward_half_plane_split():
    X = np.array([[-1.0, 0.0], [1.0, 0.0]])
    images = np.where(DISK.nodes[:, :1] < 0, X[0], X[1])
    target = DiscreteMeasure(X, [math.pi / 2, math.pi / 2])
    assert pushforward_discrepancy(GridField(DISK, images), DISK.weights, target) <= 4 * DISK.h * DISK.S


def test_grid_field_csv_round_trip(tmp_path):
    small = PhysicalDomain.disk(1.0, 16)
    f = GridField(small, small.nodes * 2.0)
    f.to_csv(tmp_path / "f.csv")
    g = GridField.from_csv(tmp_path / "f.csv", small)
    assert np.array_equal(f.values, g.values)


SMALL = PhysicalDomain.disk(1.0, 20)
fields = hnp.arrays(float, (len(SMALL.nodes), 2), elements=st.floats(-2, 2)).map(lambda v: GridField(SMALL, v))


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.large_base_example])
@given(fields, fields, fields, st.sampled_from([1.0, 1.5, 2.0, 3.0]))
def test_lr_distance_triangle_inequality(F, G, H, r):
    assert lr_distance(F, H, r) <= lr_distance(F, G, r) + lr_distance(G, H, r) + 1e-9


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.large_base_example])
@given(fields, st.floats(-3, 3), st.floats(0, 2 * math.pi))
def test_lr_distance_r1_offset_scaling(F, lam, angle):
    d = np.array([math.cos(angle), math.sin(angle)])
    G = GridField(SMALL, F.values + lam * d)
    assert lr_distance(F, G, 1) == pytest.approx(abs(lam) * SMALL.quadrature_mass, rel=1e-9, abs=1e-12)


@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=50))
def test_fsum_matches_math_fsum(values):
    assert fsum(np.array(values)) == math.fsum(values)
