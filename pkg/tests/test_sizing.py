import numpy as np
import pytest

from hybridmmog import oracles, pam, sizing, vsdht
from hybridmmog.vsdht import RttModel


def test_shipped_rtt_file_loads():
    model = RttModel.from_file(sizing.king_like_rtt_path())
    assert len(model.samples_ms) == 2000 and (model.samples_ms > 0).all()


def test_vs_payload():
    assert sizing.vs_payload_bytes(0, 0) == 336
    assert sizing.vs_payload_bytes(15, 40) == 15 * 140 + 40 * 12 + 336
    np.testing.assert_array_equal(sizing.vs_payload_bytes(1, np.array([0, 1])), [476, 488])


def test_fraction_under_extremes():
    rng = np.random.default_rng(0)
    fast = RttModel(samples_ms=[1.0])
    slow = RttModel(samples_ms=[5000.0])
    assert sizing.fraction_under(16 * 1024, fast, rng) == 1.0
    assert sizing.fraction_under(0, slow, rng) == 0.0


def test_migration_table_is_decreasing():
    table = sizing.migration_table(RttModel(), np.random.default_rng(1))
    vals = [table[kb] for kb in sizing.PAYLOADS_KB]
    assert vals == sorted(vals, reverse=True)


def test_quantile_matches_direct_sampling():
    # one fixed RTT and a single-client population make the payload deterministic
    model = RttModel(samples_ms=[100.0], loss_prob=0.0)
    rng = np.random.default_rng(2)
    q = sizing.migration_quantile(5, model, rng, n=50, p_max=1)
    payload = sizing.vs_payload_bytes(5, 5)
    assert q == pytest.approx(vsdht.migration_time_for_rtt(payload, 0.1, 0.0))


def test_max_entities_monotone_in_the_limit():
    model = RttModel()
    small = sizing.max_entities_under(model, np.random.default_rng(3), limit=0.8, n=2000, k_max=30)
    large = sizing.max_entities_under(model, np.random.default_rng(3), limit=1.5, n=2000, k_max=30)
    assert small <= large
    assert sizing.max_entities_under(RttModel(samples_ms=[2000.0]), np.random.default_rng(0), n=100, k_max=3) == 0


def test_coverage_oracle_reports_violations():
    check = oracles.check_greedy_coverage(40, seed=5)
    assert check.ok and check.instances == 40 and check.worst_ratio >= oracles.GREEDY_BOUND
    empty = oracles.CoverageCheck()
    assert not empty.ok


def test_coverage_instances_are_in_range():
    rng = np.random.default_rng(6)
    for _ in range(50):
        p, nbs, d = oracles.random_coverage_instance(rng)
        assert 1 <= len(nbs) <= 8 and 1 <= d <= 4
        assert all(isinstance(n, pam.Aoi) for n in nbs)


def test_placement_oracle():
    check = oracles.check_placement_sandwich(25, seed=7)
    assert check.ok and check.infeasible_greedy == 0 and check.failures == []
