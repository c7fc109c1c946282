import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridmmog import workload
from hybridmmog.workload import EXPLORE, HALT, TRAVEL, WorldConfig


def test_player_count_follows_the_season():
    assert workload.player_count(0, 200, 1000) == 0
    assert workload.player_count(100, 200, 1000) == 1000
    assert workload.player_count(200, 200, 1000) == 0
    assert workload.player_count(300, 200, 1000) == 1000
    # sin(pi/6) = 0.5 -> exactly half, rounded half up
    assert workload.player_count(200 / 6, 200, 1001) == 501


def test_player_count_rejects_negative_time():
    with pytest.raises(workload.WorkloadError):
        workload.player_count(-1, 200, 10)


@given(st.integers(0, 5000), st.floats(1, 1000), st.integers(0, 20000))
def test_player_count_bounded(t, lam, p_max):
    assert 0 <= workload.player_count(t, lam, p_max) <= p_max


def test_hotspots_cover_the_requested_area():
    cfg = WorldConfig()
    r = workload.hotspot_radius(cfg)
    assert cfg.H_num * math.pi * r * r == pytest.approx(cfg.p_hot * cfg.width * cfg.height)


def test_hotspots_that_cannot_fit_are_rejected():
    cfg = WorldConfig(width=100, height=100, H_num=1, p_hot=0.99)
    with pytest.raises(workload.WorkloadError):
        workload.place_hotspots(cfg, np.random.default_rng(0))


@pytest.mark.parametrize("bad", [dict(p_hot=1.5), dict(delta_t=0), dict(aoi_radius=-1), dict(population="x"),
                                 dict(transitions=((1, 0, 0), (0, 1, 0), (0, 0, 0.5)))])
def test_config_validation(bad):
    with pytest.raises(workload.WorkloadError):
        WorldConfig(**bad).validate()


def test_init_world_counts_and_ids():
    cfg = WorldConfig(O_num=300, P_max=50)
    hotspots, objects, avatars = workload.init_world(cfg, np.random.default_rng(1))
    assert len(hotspots) == cfg.H_num
    assert [o.uid for o in objects] == list(range(300))
    assert [a.id for a in avatars] == list(range(300, 350))
    assert all(a.mode == HALT for a in avatars)
    # the hotspot share of the objects is placed inside, the rest outside
    xy = np.array([o.position for o in objects])
    inside = workload.inside_any(xy, hotspots)
    assert inside.sum() == math.floor(cfg.p_obj * cfg.O_num)


def test_avatar_start_share_in_hotspots():
    # a start point is in a hotspot if it was drawn there (p_den) or landed there uniformly (p_hot)
    cfg = WorldConfig()
    rng = np.random.default_rng(2)
    hotspots = workload.place_hotspots(cfg, rng)
    pts = workload.avatar_start_points(rng, 20000, cfg, hotspots)
    share = workload.inside_any(pts, hotspots).mean()
    expected = cfg.p_den + (1 - cfg.p_den) * cfg.p_hot
    assert share == pytest.approx(expected, abs=0.015)


def test_zipf_radii_bins_follow_inverse_rank():
    rng = np.random.default_rng(3)
    radius = 10.0
    r = workload.zipf_radii(rng, 200_000, radius)
    assert r.min() >= 0 and r.max() <= radius
    counts = np.bincount(np.floor(r).astype(int), minlength=10)[:10]
    weights = 1.0 / np.arange(1, 11)
    np.testing.assert_allclose(counts / counts.sum(), weights / weights.sum(), atol=0.005)


def test_mobility_keeps_avatars_in_the_world():
    cfg = WorldConfig(width=500, height=400, speed=30, P_max=200)
    rng = np.random.default_rng(4)
    hotspots, _, avatars = workload.init_world(cfg, rng)
    pop = workload.Population(avatars, cfg.O_num + len(avatars))
    trans = workload.transition_matrix(cfg)
    for _ in range(100):
        pop.step(hotspots, trans, rng, cfg)
        assert (pop.pos >= 0).all() and (pop.pos[:, 0] <= 500).all() and (pop.pos[:, 1] <= 400).all()
    assert set(np.unique(pop.mode)) <= {HALT, EXPLORE, TRAVEL}


def test_travelling_moves_at_most_speed():
    cfg = WorldConfig(speed=7.0, transitions=((0, 0, 1), (0, 0, 1), (0, 0, 1)))
    rng = np.random.default_rng(5)
    hotspots, _, avatars = workload.init_world(cfg, rng, n_avatars=100)
    pop = workload.Population(avatars, 2000)
    before = pop.pos.copy()
    pop.step(hotspots, workload.transition_matrix(cfg), rng, cfg)
    moved = np.linalg.norm(pop.pos - before, axis=1)
    assert (moved <= 7.0 + 1e-9).all()
    assert (pop.mode[moved < 7.0 - 1e-9] == HALT).all()  # arrived early -> halt


def test_mode_chain_matches_transition_matrix():
    cfg = WorldConfig()
    trans = workload.transition_matrix(cfg)
    rng = np.random.default_rng(6)
    n = 30000
    pos = np.full((n, 2), 2500.0)
    target = np.full((n, 2), np.nan)
    for start in (HALT, EXPLORE):
        mode = np.full(n, start)
        _, new, _ = workload.advance(pos, mode, target, [], trans, rng, cfg)
        freq = np.bincount(new, minlength=3) / n
        # travellers that arrive in one step turn back into halted avatars; a
        # 5-unit step almost never reaches a uniformly drawn target
        np.testing.assert_allclose(freq, trans[start], atol=0.01)


def test_resize_joins_and_leaves():
    cfg = WorldConfig(P_max=10)
    rng = np.random.default_rng(7)
    hotspots, _, avatars = workload.init_world(cfg, rng)
    pop = workload.Population(avatars, 2000)
    joined, left = pop.resize(15, rng, cfg, hotspots)
    assert len(pop) == 15 and list(joined) == [2000, 2001, 2002, 2003, 2004] and len(left) == 0
    joined, left = pop.resize(4, rng, cfg, hotspots)
    assert len(pop) == 4 and len(joined) == 0 and len(left) == 11
    assert not set(left) & set(pop.ids)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=0, max_size=30),
       st.lists(st.tuples(st.floats(0, 100), st.floats(0, 100)), min_size=0, max_size=30),
       st.floats(0.5, 40))
def test_aoi_counts_match_brute_force(ents, avs, radius):
    got = workload.aoi_counts(ents, avs, radius)
    want = [sum(math.dist(e, a) <= radius for a in avs) for e in ents]
    # boundary points may differ by rounding; compare away from the rim
    for e, g, w in zip(ents, got, want):
        if all(abs(math.dist(e, a) - radius) > 1e-9 for a in avs):
            assert g == w


def test_compute_load_is_memberships_times_message_length():
    cfg = WorldConfig(P_max=40, O_num=60, width=300, height=300, H_num=1, p_hot=0.2)
    _, objects, avatars = workload.init_world(cfg, np.random.default_rng(8))
    sample = workload.compute_load(objects, avatars, cfg.aoi_radius, cfg.M_len, 3)
    assert sample.step == 3
    assert sample.total_bandwidth == sum(sample.per_entity_aoi_count.values()) * cfg.M_len
    # each avatar is inside its own AOI
    assert all(sample.per_entity_aoi_count[a.id] >= 1 for a in avatars)


def test_client_count_pmf_is_power_law():
    support, pmf = workload.client_count_pmf(1000, 1.4)
    assert support[0] == 1 and support[-1] == 1000
    assert pmf.sum() == pytest.approx(1.0)
    assert pmf[0] / pmf[1] == pytest.approx(2 ** 1.4)
    draws = workload.sample_client_counts(np.random.default_rng(9), 100_000)
    assert draws.min() >= 1 and draws.max() <= 1000
    assert (draws == 1).mean() == pytest.approx(pmf[0], abs=0.005)
