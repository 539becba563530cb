"""Sanity checks of the test oracles themselves against hand-computed values."""

import numpy as np
from scipy import stats

from oracles import crps_integral, gamma_poisson_grid, gp_joint_partition, total_variation


def test_crps_integral_two_point():
    # F = 0.5 on [0, 1); indicator is 1 from 0: integrand 0.25 on [0, 1)
    assert crps_integral([0.0, 1.0], 0.0) == 0.25


def test_crps_integral_point_mass_is_abs_error():
    assert np.isclose(crps_integral([2.0, 2.0, 2.0], 5.0), 3.0)


def test_grid_posterior_matches_conjugate_for_flat_data():
    grid = np.linspace(0.01, 4, 4000)
    dens = gamma_poisson_grid([10, 12], [10.0, 10.0], 2.0, 1.0, grid)
    exact = stats.gamma.pdf(grid, 24.0, scale=1 / 21.0)
    assert total_variation(dens, exact, grid) < 1e-4


def test_gp_partition_without_test_points_noise():
    mean, cov = gp_joint_partition((1.0, 0.0, 0.0, 1e-3), [0.0], [1.0], [0.0], test_noise=False)
    assert np.isclose(mean[0], 1.0, atol=1e-5)
    assert abs(cov[0, 0]) < 1e-5
