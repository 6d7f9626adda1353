"""Ground-truth engines: brute force, penalty projections, PGD attacks."""

import math

import numpy as np
import pytest

from relucert.errors import OracleFailure
from relucert.geometry import project_cap_axial, spherical_cap_distance
from relucert.network import Ball, CertInstance, Halfspace, Network, forward
from relucert.oracle import (
    HyperboloidCapSpec,
    SphericalCapSpec,
    brute_force_ball,
    numeric_cap_projection,
    pgd_attack,
)
from relucert.sdp import build_relaxation, solve_sdp


def identity_chain(depth=1):
    layers = [(np.array([[1.0]]), np.array([0.0])) for _ in range(depth)]
    return Network(layers=layers, output=(np.eye(1), np.zeros(1)))


def scalar_ball(x_hat, z_hat, rho):
    return CertInstance(net=identity_chain(1), x_hat=np.array([float(x_hat)]),
                        goal=Ball(z_hat=np.array([float(z_hat)]), rho=float(rho)))


class TestBruteForceBall:
    def test_one_neuron_worked_example(self):
        res = brute_force_ball(scalar_ball(-1.0, 1.0, 0.4))
        assert res.status == "ok"
        assert res.value == pytest.approx(1.6, abs=1e-8)
        np.testing.assert_allclose(res.argmin, [0.6], atol=1e-8)

    def test_anchor_on_target_gives_zero(self):
        rng = np.random.default_rng(73)
        net = Network(
            layers=[(rng.standard_normal((2, 2)), rng.standard_normal(2))],
            output=(np.eye(2), np.zeros(2)))
        x_hat = rng.standard_normal(2)
        z_hat = forward(net, x_hat)[0][-1]
        inst = CertInstance(net=net, x_hat=x_hat, goal=Ball(z_hat=z_hat, rho=0.3))
        res = brute_force_ball(inst)
        assert res.value == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(res.argmin, x_hat, atol=1e-6)

    def test_negative_target_is_infeasible(self):
        res = brute_force_ball(scalar_ball(0.0, -1.0, 0.5))
        assert res.status == "infeasible"
        assert res.argmin is None

    def test_argmin_is_feasible_to_tolerance(self):
        inst = scalar_ball(-2.0, 1.5, 0.3)
        res = brute_force_ball(inst)
        out = forward(inst.net, res.argmin)[0][-1]
        assert np.linalg.norm(out - inst.goal.z_hat) <= inst.goal.rho + 1e-9

    def test_grid_refinement_is_monotone(self):
        """Halving the grid spacing never worsens the reported optimum."""
        inst = scalar_ball(-1.0, 1.0, 0.4)
        coarse = brute_force_ball(inst, grid_points_per_dim=21)
        fine = brute_force_ball(inst, grid_points_per_dim=41)
        assert fine.value <= coarse.value + 1e-6

    def test_deterministic(self):
        inst = scalar_ball(-1.0, 1.0, 0.4)
        a = brute_force_ball(inst)
        b = brute_force_ball(inst)
        assert a.value == b.value
        np.testing.assert_array_equal(a.argmin, b.argmin)

    def test_dimension_limit_enforced(self):
        rng = np.random.default_rng(79)
        net = Network(layers=[(rng.standard_normal((2, 4)), np.zeros(2))],
                      output=(np.eye(2), np.zeros(2)))
        inst = CertInstance(net=net, x_hat=np.zeros(4),
                            goal=Ball(z_hat=np.ones(2), rho=0.5))
        with pytest.raises(ValueError):
            brute_force_ball(inst)

    def test_halfspace_goal_rejected(self):
        inst = CertInstance(net=identity_chain(1), x_hat=np.zeros(1),
                            goal=Halfspace(w=np.array([1.0]), b=0.0))
        with pytest.raises(ValueError):
            brute_force_ball(inst)


class TestNumericCapProjection:
    def test_matches_spherical_closed_form(self):
        rng = np.random.default_rng(83)
        worst = 0.0
        for _ in range(60):
            axis = rng.uniform(-3, 3)
            norm = abs(axis) * (1 + rng.uniform(0, 2)) + rng.uniform(0, 1)
            z_target = rng.uniform(-3, 3)
            got = numeric_cap_projection(SphericalCapSpec(axis=axis, norm=norm),
                                         z_target)
            want = max(spherical_cap_distance(axis, norm, z_target).phi, 0.0)
            worst = max(worst, abs(got - want))
        assert worst <= 1e-6

    def test_matches_axial_projection_collinear(self):
        got = numeric_cap_projection(HyperboloidCapSpec(z_hat=2.0, rho=1.0), -1.0)
        assert got == pytest.approx(2.0, abs=1e-6)

    def test_matches_axial_projection_off_axis(self):
        # the anchor sits past the collinearity boundary, so the nearest
        # point leaves the axis; the closed form still knows the distance
        want = project_cap_axial(2.0, 1.0, -3.0)
        assert not want.collinear
        got = numeric_cap_projection(HyperboloidCapSpec(z_hat=2.0, rho=1.0), -3.0)
        assert got == pytest.approx(want.distance, abs=1e-6)
        assert got == pytest.approx(math.sqrt(15.75), abs=1e-6)

    def test_anchor_inside_cap(self):
        got = numeric_cap_projection(HyperboloidCapSpec(z_hat=1.0, rho=0.5), 0.9)
        assert got <= 1e-8

    def test_inconsistent_spherical_spec_rejected(self):
        with pytest.raises(ValueError):
            SphericalCapSpec(axis=2.0, norm=1.0)

    def test_nonpositive_rho_rejected(self):
        with pytest.raises(ValueError):
            HyperboloidCapSpec(z_hat=1.0, rho=0.0)


class TestPgdAttack:
    def attack_example(self):
        # misclassify iff f(x) >= 0.5; nearest such x from -1 is 0.5
        return CertInstance(net=identity_chain(1), x_hat=np.array([-1.0]),
                            goal=Halfspace(w=np.array([-1.0]), b=0.5))

    def test_one_neuron_worked_example(self):
        res = pgd_attack(self.attack_example())
        assert res.status == "ok"
        assert res.method == "pgd"
        assert 1.5 - 1e-9 <= res.value <= 1.505
        acts, _ = forward(identity_chain(1), res.argmin)
        assert float(-1.0 * acts[-1][0]) + 0.5 <= 1e-9

    def test_zero_steps_finds_nothing(self):
        res = pgd_attack(self.attack_example(), steps=0)
        assert res.status == "no_attack_found"

    def test_deterministic_under_seed(self):
        a = pgd_attack(self.attack_example(), seed=3)
        b = pgd_attack(self.attack_example(), seed=3)
        assert a.value == b.value
        np.testing.assert_array_equal(a.argmin, b.argmin)

    def test_ball_goal_rejected(self):
        with pytest.raises(ValueError):
            pgd_attack(scalar_ball(0.0, 1.0, 0.5))

    def test_upper_bound_sits_above_the_sdp_lower_bound(self):
        inst = self.attack_example()
        d_ub = pgd_attack(inst).value
        sol = solve_sdp(build_relaxation(inst), tol=1e-9)
        assert d_ub >= sol.l_lb - 1e-5


class TestSandwich:
    def test_bounds_bracket_the_brute_force_optimum(self):
        """L_lb <= L* on ball instances where both engines run."""
        rng = np.random.default_rng(89)
        checked = 0
        for _ in range(10):
            n0 = int(rng.integers(1, 3))
            n1 = int(rng.integers(1, 4))
            net = Network(
                layers=[(rng.standard_normal((n1, n0)), rng.standard_normal(n1))],
                output=(np.eye(n1), np.zeros(n1)))
            x_hat = rng.standard_normal(n0)
            goal = Ball(z_hat=np.abs(rng.standard_normal(n1)) + 0.1,
                        rho=float(rng.uniform(0.2, 0.8)))
            if np.linalg.norm(forward(net, x_hat)[0][-1] - goal.z_hat) < goal.rho + 0.05:
                # anchor already (nearly) meets the goal; the optimum is ~0
                # and sqrt of the solver's objective tolerance would swamp it
                continue
            inst = CertInstance(net=net, x_hat=x_hat, goal=goal)
            try:
                oracle = brute_force_ball(inst, grid_points_per_dim=31)
            except OracleFailure:
                continue
            if oracle.status != "ok":
                continue
            sol = solve_sdp(build_relaxation(inst), tol=1e-9)
            assert sol.l_lb <= oracle.value + 1e-5
            checked += 1
        assert checked >= 3
