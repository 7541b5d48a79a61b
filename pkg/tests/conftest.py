"""Shared fixtures: small worlds and seeded generators.

Property-style tests draw their cases from plain seeded numpy generators in
loops, so every failure is reproducible from the seed literals in the test.
"""

import numpy as np
import pytest

from fuselocate.world import (FREE, CorridorSpec, OccupancyGrid, build_floor,
                              corridor_loop_waypoints)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ring_spec():
    return CorridorSpec(outer_width_m=12.4, outer_height_m=12.4,
                        corridor_width_m=2.0, wall_thickness_m=0.2)


@pytest.fixture(scope="session")
def ring_grid(ring_spec):
    return build_floor(ring_spec, 0.05)


@pytest.fixture(scope="session")
def ring_waypoints(ring_spec):
    return corridor_loop_waypoints(ring_spec)


@pytest.fixture(scope="session")
def open_grid():
    """12 m x 12 m of pure free space for unobstructed-motion tests."""
    n = 240
    return OccupancyGrid(width=n, height=n, resolution=0.05,
                         origin=(0.0, 0.0),
                         cells=np.full((n, n), FREE, np.uint8))
