"""Candidate sampling rules, reject sets and the node acceptance gate."""

import numpy as np
import pytest

from lyagraph.dynamics import Obstacle, SystemConfig
from lyagraph.lyapunov import RoaConfig
from lyagraph.nodes import (
    NodeController,
    PlannerWorld,
    RejectSet,
    RoaUnion,
    SamplingConfig,
    sample_candidate,
)


def _node(node_id, center, eta=1.5):
    return NodeController(
        id=node_id, center=np.asarray(center, float), policy=None, lyapunov=None,
        eta=eta,
    )


def test_sampling_config_ordering_constraint():
    roa = RoaConfig()  # eta_lb 1.0, eta_ub 1.6
    SamplingConfig(rho=0.9).validate(roa, [])
    with pytest.raises(ValueError, match="rho"):
        SamplingConfig(rho=0.7).validate(roa, [])  # below eta_ub/2
    with pytest.raises(ValueError, match="rho"):
        SamplingConfig(rho=1.0).validate(roa, [])  # not strictly below eta_lb


def test_sampling_config_alpha_constraint():
    roa = RoaConfig()
    obs = [Obstacle((2.0, 0.0), 1.0)]
    SamplingConfig(alpha=2.5).validate(roa, obs)  # 2.5 > 0.8 + 1.0
    with pytest.raises(ValueError, match="alpha"):
        SamplingConfig(alpha=1.8).validate(roa, obs)
    # without obstacles alpha is unconstrained
    SamplingConfig(alpha=0.0).validate(roa, [])


def test_reject_set():
    r = RejectSet()
    assert len(r) == 0
    r.add([1.0, 1.0])
    assert len(r) == 1
    assert r.too_close(np.array([1.2, 1.0]), 0.9)
    assert not r.too_close(np.array([3.0, 3.0]), 0.9)


def test_roa_union_membership():
    u = RoaUnion([_node(0, [0.0, 0.0], eta=1.0)])
    assert u.contains(np.array([0.5, 0.5]))
    assert not u.contains(np.array([1.5, 0.0]))
    u.add(_node(1, [2.0, 0.0], eta=1.0))
    assert u.contains(np.array([1.5, 0.0]))
    assert not RoaUnion().contains(np.zeros(2))


def _world(obstacles=()):
    return PlannerWorld(SystemConfig(), list(obstacles), SamplingConfig())


def test_sample_candidate_respects_all_constraints():
    world = _world([Obstacle((2.0, 0.0), 1.0)])
    cfg = world.sampling
    existing = [np.array([0.0, 0.0]), np.array([-3.0, 3.0])]
    region = RoaUnion([_node(0, [0.0, 0.0]), _node(1, [-3.0, 3.0])])
    rejects = RejectSet()
    rejects.add([1.0, 0.5])
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = sample_candidate(world, existing, region, rejects, cfg, rng)
        assert x is not None
        assert np.all(np.abs(x) <= 5.0)
        assert all(np.linalg.norm(x - c) >= cfg.rho for c in existing)
        assert np.linalg.norm(x - np.array([2.0, 0.0])) >= cfg.alpha
        assert np.linalg.norm(x - np.array([1.0, 0.5])) >= cfg.reject_radius
        assert region.contains(x)


def test_sample_candidate_connectivity_toggle():
    world = _world()
    region = RoaUnion([_node(0, [4.0, 4.0], eta=0.5)])  # tiny region
    rng = np.random.default_rng(1)
    x = sample_candidate(world, [], region, None, world.sampling, rng,
                         require_connected=True)
    assert x is not None and region.contains(x)
    # unconstrained sampling can leave the region
    rng = np.random.default_rng(1)
    x = sample_candidate(world, [], region, None, world.sampling, rng,
                         require_connected=False)
    assert x is not None


def test_sample_candidate_exhaustion_returns_none():
    world = _world()
    # an empty coverage region excludes every draw
    x = sample_candidate(
        world, [], RoaUnion(), None, world.sampling, np.random.default_rng(2)
    )
    assert x is None


def test_sample_candidate_deterministic():
    world = _world()
    a = sample_candidate(world, [], None, None, world.sampling,
                         np.random.default_rng(3), require_connected=False)
    b = sample_candidate(world, [], None, None, world.sampling,
                         np.random.default_rng(3), require_connected=False)
    np.testing.assert_array_equal(a, b)


def test_node_contains_boundary_inclusive():
    n = _node(0, [1.0, 1.0], eta=1.0)
    assert n.contains([2.0, 1.0])
    assert not n.contains([2.0001, 1.0])
