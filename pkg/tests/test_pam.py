import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridmmog import pam
from hybridmmog.pam import Aoi

P = Aoi((0.0, 0.0), 3.0, uid=0)


def five_scene():
    """Five neighbours of P on a 3x3 grid where the score heuristic is fooled."""
    return {
        "A": Aoi((0.0, 0.5), 0.5, 1),
        "B": Aoi((3.75, 0.75), 1.25, 2),
        "C": Aoi((2.75, 0.25), 1.5, 3),
        "D": Aoi((1.75, -2.75), 0.5, 4),
        "E": Aoi((-2.0, -4.25), 1.75, 5),
    }


def names(scene, chosen):
    inv = {a.uid: k for k, a in scene.items()}
    return [inv[a.uid] for a in chosen]


def bits(mask, n=9):
    return "".join("1" if mask >> i & 1 else "0" for i in range(n))


# -- geometry ---------------------------------------------------------------


def test_coverage_of_two_neighbours():
    covered, grid = pam.coverage(P, [Aoi((-4.0, 0.0), 2.5), Aoi((0.0, 4.5), 2.0)], 3)
    assert covered == 5 and grid.usable == 9


def test_five_scene_tile_masks():
    scene = five_scene()
    masks = pam.neighbor_masks(P, list(scene.values()), 3)
    # tile i is row i // 3 (from low y) and column i % 3 (from low x)
    assert [bits(m) for m in masks] == ["000010010", "000001001", "001001001", "001000000", "110000000"]


def test_corner_tiles_are_masked_on_fine_grids():
    *_, unmasked = pam.tile_layout(1.0, 8)
    assert not unmasked[0] and not unmasked[-1] and unmasked[8 * 4 + 4]
    # the share of unmasked tiles approaches pi / 4
    *_, fine = pam.tile_layout(1.0, 256)
    assert fine.mean() == pytest.approx(math.pi / 4, abs=0.005)


def test_distant_neighbour_touches_nothing():
    covered, _ = pam.coverage(P, [Aoi((50.0, 50.0), 1.0)], 16)
    assert covered == 0
    assert pam.coverage(P, [], 16)[0] == 0


def test_bad_inputs():
    with pytest.raises(ValueError):
        Aoi((0, 0), 0.0)
    with pytest.raises(ValueError):
        pam.tile_layout(1.0, 0)
    with pytest.raises(ValueError):
        pam.greedy_heuristic(P, [], -1, 4)
    with pytest.raises(ValueError):
        pam.score_heuristic(P, [], -1, 4)
    with pytest.raises(ValueError):
        pam.select_masks("random", [], 1, 9)


# -- heuristics -------------------------------------------------------------


def test_score_heuristic_picks_the_best_pair_in_the_tile_score_scene():
    scene = {"A": Aoi((-1.75, -1.25), 2.75, 1), "C": Aoi((-1.0, 2.75), 2.75, 3), "B": Aoi((-3.0, 0.0), 2.0, 2)}
    chosen = pam.score_heuristic(P, list(scene.values()), 2, 3)
    assert sorted(names(scene, chosen)) == ["A", "C"]
    _, best = pam.brute_force_max_coverage(P, list(scene.values()), 2, 3)
    assert pam.coverage(P, chosen, 3)[0] == best


def test_score_heuristic_is_suboptimal_in_the_five_scene():
    scene = five_scene()
    chosen = pam.score_heuristic(P, list(scene.values()), 2, 3)
    assert sorted(names(scene, chosen)) == ["A", "E"]
    assert pam.coverage(P, chosen, 3)[0] == 4
    subset, best = pam.brute_force_max_coverage(P, list(scene.values()), 2, 3)
    assert best == 5 and sorted(names(scene, subset)) in (["A", "C"], ["C", "E"])


def test_greedy_heuristic_order_in_the_five_scene():
    scene = five_scene()
    chosen = pam.greedy_heuristic(P, list(scene.values()), 3, 3)
    assert names(scene, chosen) == ["C", "A", "E"]


def test_trivial_cases():
    scene = list(five_scene().values())
    assert pam.score_heuristic(P, scene, 9, 3) == scene
    assert len(pam.greedy_heuristic(P, scene, 9, 3)) == 5
    first = pam.greedy_heuristic(P, scene, 1, 3)[0]
    masks = pam.neighbor_masks(P, scene, 3)
    assert pam.coverage(P, [first], 3)[0] == max(m.bit_count() for m in masks)
    assert pam.brute_force_max_coverage(P, scene, 0, 3) == ([], 0)
    _, full = pam.brute_force_max_coverage(P, scene, 5, 3)
    assert full == pam.coverage(P, scene, 3)[0]


def test_brute_force_limit():
    masks = [1 << i for i in range(40)]
    with pytest.raises(ValueError):
        pam.brute_force_masks(masks, 20)


mask_lists = st.lists(st.integers(0, 2 ** 16 - 1), min_size=0, max_size=8)


@settings(max_examples=200, deadline=None)
@given(mask_lists, st.integers(0, 5))
def test_greedy_meets_the_approximation_bound(masks, d):
    greedy = pam.union_count(masks[i] for i in pam.greedy_masks(masks, d))
    _, best = pam.brute_force_masks(masks, d)
    assert greedy >= (1 - 1 / math.e) * best - 1e-9
    assert greedy <= best


@settings(max_examples=200, deadline=None)
@given(mask_lists, st.integers(0, 2 ** 16 - 1), st.data())
def test_coverage_is_monotone_and_submodular(masks, extra, data):
    # f(S) = tiles covered by S; S a subset of T
    t_idx = data.draw(st.sets(st.integers(0, max(len(masks) - 1, 0)))) if masks else set()
    s_idx = data.draw(st.sets(st.sampled_from(sorted(t_idx)))) if t_idx else set()
    f = lambda idx, more=0: pam.union_count([masks[i] for i in idx] + [more])
    assert f(s_idx) <= f(t_idx)
    assert f(s_idx, extra) - f(s_idx) >= f(t_idx, extra) - f(t_idx)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-6, 6), st.floats(-6, 6), st.floats(0.3, 4)), min_size=1, max_size=6),
       st.integers(2, 12))
def test_tile_hits_match_point_sampling(nbs, res):
    # a tile is hit when the neighbour disk intersects its rectangle: compare with the closest point
    neighbors = [Aoi((x, y), r) for x, y, r in nbs]
    layout = pam.tile_layout(P.radius, res)
    hits = pam.tile_hits(P.center, P.radius, [n.center for n in neighbors], [n.radius for n in neighbors], res, layout)
    x0, x1, y0, y1, unmasked = layout
    for k, n in enumerate(neighbors):
        cx = np.clip(n.center[0], x0, x1)
        cy = np.clip(n.center[1], y0, y1)
        dist = np.hypot(cx - n.center[0], cy - n.center[1])
        clear = np.abs(dist - n.radius) > 1e-9
        want = (dist <= n.radius) & unmasked
        np.testing.assert_array_equal(hits[k][clear], want[clear])


# -- gossip -----------------------------------------------------------------


def make_peer(pid, pos, d=3, random_size=4, stale=5, radius=10.0):
    return pam.PeerState(pid, pos, radius, pam.PeerView(d=d, random_size=random_size, stale_threshold=stale))


def test_merge_fresh_keeps_the_newest():
    into = {}
    assert pam.merge_fresh(into, [pam.PeerDescriptor(1, (0, 0), 3)]) == [1]
    assert pam.merge_fresh(into, [pam.PeerDescriptor(1, (5, 5), 2), pam.PeerDescriptor(0, (1, 1), 9)], skip=0) == []
    assert into[1].timestamp == 3
    pam.merge_fresh(into, [pam.PeerDescriptor(1, (5, 5), 4)])
    assert into[1].position == (5, 5)


def test_rank_coverage_drops_stale_and_respects_d():
    me = make_peer(0, (0.0, 0.0), d=2, stale=5)
    me.iteration = 20
    cands = {i: pam.PeerDescriptor(i, (float(i), 0.0), 20 - i) for i in range(1, 9)}
    picked = pam.rank_coverage(me, cands, "greedy", 8)
    assert len(picked) == 2
    assert all(20 - c.timestamp <= 5 for c in picked.values())


def test_random_exchange_bounds_the_view_and_offers_arrivals():
    rng = np.random.default_rng(0)
    a, b = make_peer(1, (0.0, 0.0)), make_peer(2, (5.0, 0.0))
    a.view.random_layer = {i: pam.PeerDescriptor(i, (float(i), 1.0), 0) for i in range(10, 14)}
    b.view.random_layer = {i: pam.PeerDescriptor(i, (float(i), 2.0), 0) for i in range(20, 24)}
    before = {1: set(a.view.random_layer), 2: set(b.view.random_layer)}
    pam.random_exchange(a, b, rng)
    for s in (a, b):
        assert len(s.view.random_layer) <= s.view.random_size
        assert s.peer_id not in s.view.random_layer
        # every newly met survivor is offered to the coverage layer
        assert set(s.view.random_layer) - before[s.peer_id] == set(s.view.pending)


def test_gossip_converges_to_the_nearest_peers():
    rng = np.random.default_rng(1)
    pos = {i: (float(x), float(y)) for i, (x, y) in enumerate(rng.uniform(0, 60, size=(40, 2)))}
    net = {i: make_peer(i, p, d=4, random_size=6, stale=10, radius=12.0) for i, p in pos.items()}
    ids = sorted(net)
    for i in ids:
        for j in rng.choice([k for k in ids if k != i], size=3, replace=False):
            net[i].view.random_layer[int(j)] = pam.PeerDescriptor(int(j), pos[int(j)], 0)
    for it in range(1, 60):
        for i in ids:
            pam.gossip_cycle(net[i], net, it, rng, random_every=2, grid_resolution=8)
            s = net[i]
            assert len(s.view.coverage_layer) <= s.view.d
            assert all(it - c.timestamp <= s.view.stale_threshold for c in s.view.coverage_layer.values())
    acs = []
    everyone = [Aoi(p, 12.0, i) for i, p in pos.items()]
    for i in ids:
        me = Aoi(pos[i], 12.0, i)
        view = [Aoi(c.position, 12.0, c.peer_id) for c in net[i].view.coverage_layer.values()]
        acs.append(pam.ac(me, view, everyone, 8, 4)[0])
    assert np.mean(acs) > 0.8


def test_gossip_skips_departed_partners():
    rng = np.random.default_rng(2)
    a = make_peer(1, (0.0, 0.0))
    a.view.random_layer = {9: pam.PeerDescriptor(9, (1.0, 1.0), 0)}
    pam.gossip_cycle(a, {1: a}, 4, rng)
    assert 9 not in a.view.random_layer and a.messages == 0


# -- replicas and server ------------------------------------------------------


def test_replica_put_and_prune():
    rep = pam.LocalReplica()
    rep.put(1, (0, 0), 1.0, pam.SERVER)
    rep.put(1, (9, 9), 0.5, pam.OVERLAY)     # older: ignored
    assert rep[1].position == (0, 0)
    rep.put(2, (50, 50), 2.0, pam.SERVER)
    rep.put(3, (60, 60), 2.0, pam.SERVER)
    rep.prune((0, 0), 10.0, keep=3)
    assert set(rep) == {1, 3}


def test_query_overlay_is_order_independent():
    me = pam.PeerState(0, (0.0, 0.0), 10.0, pam.PeerView())
    k1, k2 = pam.LocalReplica(), pam.LocalReplica()
    k1.put(5, (1, 1), 1.0, pam.SERVER)
    k2.put(5, (2, 2), 2.0, pam.SERVER)
    k2.put(6, (50, 50), 3.0, pam.SERVER)     # outside the AOI
    k2.put(0, (0, 0), 3.0, pam.SERVER)       # the peer itself
    a = pam.query_overlay(me, pam.LocalReplica(), [k1, k2])
    b = pam.query_overlay(me, pam.LocalReplica(), [k2, k1])
    assert a == b and set(a) == {5} and a[5].position == (2, 2) and a[5].source == pam.OVERLAY


def test_server_update_period_and_bytes():
    positions = {1: (0.0, 0.0), 2: (3.0, 0.0), 3: (100.0, 0.0)}
    clients = {1: (0.0, 0.0), 3: (100.0, 0.0)}
    sent_steps = []
    total = 0
    for step in range(8):
        out, sent = pam.server_update(positions, clients, 1.0, step * 0.25, 5.0, 0.25)
        if out:
            sent_steps.append(step)
            assert out[1] == {2: (3.0, 0.0)} and out[3] == {}
        total += sent
    assert sent_steps == [0, 4]
    # two updates of two clients: 4 headers, two one-record AOI lists
    assert total == 4 * pam.MESSAGE_HEADER_BYTES + 2 * pam.RECORD_BYTES


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.floats(0.0, 3.0), st.integers(1, 6))
def test_update_rate_is_one_per_period(steps_per_period, phase, periods):
    dt = 0.05
    T_s = steps_per_period * dt
    steps = periods * steps_per_period
    due = sum(pam.update_due(k * dt, dt, T_s, phase % T_s) for k in range(steps))
    assert due == periods
    vec = sum(pam.updates_due(k * dt, dt, T_s, np.array([phase % T_s])).sum() for k in range(steps))
    assert vec == periods


# -- metrics ----------------------------------------------------------------


def test_jc_values():
    truth = {1: (0.0, 0.0), 2: (10.0, 0.0)}
    assert pam.jc(truth, truth, 5.0) == 1.0
    assert pam.jc({}, {}, 5.0) == 1.0
    assert pam.jc({}, truth, 5.0) == 0.0
    # one exact, one 2.5 off with d_max 5 -> (1 + 0.5) / 2
    assert pam.jc({1: (0.0, 0.0), 2: (12.5, 0.0)}, truth, 5.0) == pytest.approx(0.75)
    # a ghost entry enlarges the union
    assert pam.jc({**truth, 3: (1.0, 1.0)}, truth, 5.0) == pytest.approx(2 / 3)
    assert pam.jc({1: (0.0, 0.0)}, {1: (0.0, 0.0), 9: (1, 1)}, 5.0, exclude=9) == 1.0
    with pytest.raises(ValueError):
        pam.jc(truth, truth, 0.0)


points = st.dictionaries(st.integers(0, 20), st.tuples(st.floats(-50, 50), st.floats(-50, 50)), max_size=15)


@settings(max_examples=200, deadline=None)
@given(points, points, st.floats(0.1, 100))
def test_jc_is_bounded(client, server, d_max):
    v = pam.jc(client, server, d_max)
    assert 0.0 <= v <= 1.0
    if client == server:
        assert v == 1.0


def test_ac_exact_and_approximate():
    scene = list(five_scene().values())
    everyone = scene + [P]
    chosen = pam.score_heuristic(P, scene, 2, 3)
    value, exact = pam.ac(P, chosen, everyone, 3, 2)
    assert exact and value == pytest.approx(4 / 5)
    value, exact = pam.ac(P, chosen, everyone, 3, 2, exact_limit=1)
    assert not exact and 0 < value <= 1
    assert pam.ac(P, [], [P, Aoi((90.0, 90.0), 1.0, 7)], 3, 2) == (1.0, True)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-6, 6), st.floats(-6, 6)), min_size=1, max_size=7), st.integers(1, 4), st.data())
def test_ac_is_a_ratio(centres, d, data):
    everyone = [Aoi(c, 3.0, i + 1) for i, c in enumerate(centres)] + [P]
    view = data.draw(st.lists(st.sampled_from(everyone[:-1]), max_size=d, unique_by=lambda a: a.uid))
    value, exact = pam.ac(P, view, everyone, 8, d)
    assert exact and 0.0 <= value <= 1.0 + 1e-12


def test_brute_force_agrees_with_itertools_on_small_scene():
    scene = list(five_scene().values())
    masks = pam.neighbor_masks(P, scene, 3)
    for d in range(6):
        _, best = pam.brute_force_masks(masks, d)
        want = max((pam.union_count(c) for c in itertools.combinations(masks, d)), default=0)
        assert best == want
