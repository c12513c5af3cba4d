import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evpk.events import Event, EventStream, EventWindow, SensorGeometry, random_window
from evpk.pillars import PillarConfig, augment, build_pillars, pillar_stats

GEOM = SensorGeometry(16, 12)
DELTA = 50_000


def window_of(events, geometry=GEOM, delta=DELTA):
    return EventWindow(EventStream.from_events(events, geometry), 0, delta)


def grouping_oracle(window, polarity, slices=1):
    """Dictionary-of-lists grouping keyed by (x, y, d), chronological lists of (x, y, t_hat)."""
    groups = {}
    for e in window.events:
        if e.p != polarity:
            continue
        rel = e.t - window.t_start
        d = min(rel * slices // window.duration, slices - 1)
        groups.setdefault((e.x, e.y, d), []).append((e.x, e.y, rel / window.duration))
    return groups


def check_against_oracle(pset, groups):
    keys = sorted(groups, key=lambda k: (k[2], k[1], k[0]))
    assert pset.n_pillars == len(keys)
    for k, key in enumerate(keys):
        assert tuple(pset.coords[k]) == key
        evs = np.array(groups[key])
        c = len(evs)
        assert pset.counts[k] == c
        f = pset.features[k]
        assert np.abs(f[:c, :3] - evs).max() <= 1e-12
        assert np.abs(f[:c, 3:] - (evs - evs.mean(axis=0))).max() <= 1e-12
        assert not f[c:].any()
    assert not pset.features[pset.n_pillars:].any()
    assert not pset.counts[pset.n_pillars:].any()


class TestBuildPillars:
    EVENTS = [Event(0, 0, 0, 1), Event(0, 0, 10_000, 1), Event(1, 0, 20_000, -1)]

    def test_three_event_example(self):
        cfg = PillarConfig(max_events=5, max_pillars=4)
        pos = build_pillars(window_of(self.EVENTS), cfg, 1)
        neg = build_pillars(window_of(self.EVENTS), cfg, -1)
        assert pos.n_pillars == 1 and tuple(pos.coords[0]) == (0, 0, 0) and pos.counts[0] == 2
        assert neg.n_pillars == 1 and tuple(neg.coords[0]) == (1, 0, 0) and neg.counts[0] == 1
        np.testing.assert_allclose(pos.features[0, :2, :3], [[0, 0, 0.0], [0, 0, 0.2]])

    def test_cap_cardinality(self):
        ev = [Event(3, 3, t * 1000, 1) for t in range(7)]
        pset = build_pillars(window_of(ev), PillarConfig(max_events=5), 1)
        assert pset.counts[0] == 5
        kept = pset.features[0, :5, 2]
        # chronological slot order and a genuine subset
        assert np.all(np.diff(kept) > 0)
        assert set(np.round(kept * DELTA).astype(int)) <= {t * 1000 for t in range(7)}

    def test_most_populated_retained(self):
        ev = [Event(0, 0, 1, 1)] + [Event(5, 5, t, 1) for t in (2, 3)] + [Event(9, 9, t, 1) for t in (4, 5, 6)]
        pset = build_pillars(window_of(sorted(ev, key=lambda e: e.t)), PillarConfig(max_pillars=2), 1)
        assert sorted(pset.counts.tolist()) == [2, 3]
        assert pset.dropped_by_limit == 1

    def test_limit_tie_break_by_key(self):
        ev = [Event(x, y, 1, 1) for x, y in [(5, 0), (1, 3), (2, 0)]]
        pset = build_pillars(window_of(ev), PillarConfig(max_pillars=2), 1)
        assert [tuple(c) for c in pset.coords] == [(2, 0, 0), (5, 0, 0)]

    def test_empty_window(self):
        pset = build_pillars(window_of([]), PillarConfig(max_pillars=8), 1)
        assert pset.n_pillars == 0 and not pset.counts.any() and not pset.features.any()

    @pytest.mark.parametrize("seed", range(5))
    def test_oracle_equivalence(self, seed):
        w = random_window(GEOM, 10**4, seed=seed)
        cfg = PillarConfig(max_events=200, max_pillars=GEOM.width * GEOM.height)
        for pol in (1, -1):
            check_against_oracle(augment(build_pillars(w, cfg, pol)), grouping_oracle(w, pol))

    def test_oracle_with_slices(self):
        w = random_window(GEOM, 3000, seed=7)
        cfg = PillarConfig(max_events=100, max_pillars=5000, slices=4)
        check_against_oracle(augment(build_pillars(w, cfg, 1)), grouping_oracle(w, 1, slices=4))

    def test_slices_partition_window(self):
        ev = [Event(0, 0, t, 1) for t in (0, 12_499, 12_500, 49_999)]
        pset = build_pillars(window_of(ev), PillarConfig(slices=4, max_pillars=8), 1)
        assert [tuple(c) for c in pset.coords[:pset.n_pillars]] == [(0, 0, 0), (0, 0, 1), (0, 0, 3)]
        assert pset.counts[:3].tolist() == [2, 1, 1]

    def test_conservation_without_truncation(self):
        w = random_window(GEOM, 500, seed=8)
        pset = build_pillars(w, PillarConfig(max_events=50, max_pillars=1000), 1)
        assert pset.counts.sum() == (w.events.p == 1).sum()

    def test_sampling_deterministic_and_seed_dependent(self):
        w = random_window(SensorGeometry(2, 2), 400, seed=9)
        a = build_pillars(w, PillarConfig(max_events=5, max_pillars=8, seed=1), 1)
        b = build_pillars(w, PillarConfig(max_events=5, max_pillars=8, seed=1), 1)
        c = build_pillars(w, PillarConfig(max_events=5, max_pillars=8, seed=2), 1)
        np.testing.assert_array_equal(a.features, b.features)
        assert not np.array_equal(a.features, c.features)

    def test_sampling_is_roughly_uniform(self):
        # each of 10 events in one cell should be kept with probability M/10
        ev = [Event(0, 0, t * 1000, 1) for t in range(10)]
        hits = np.zeros(10)
        for seed in range(400):
            pset = build_pillars(window_of(ev), PillarConfig(max_events=3, max_pillars=1, seed=seed), 1)
            hits[np.round(pset.features[0, :3, 2] * 50).astype(int)] += 1
        assert np.abs(hits / 400 - 0.3).max() < 0.1

    def test_dump(self):
        pset = build_pillars(window_of(TestBuildPillars.EVENTS), PillarConfig(max_pillars=4), 1)
        assert pset.dump() == "0,0,0,0,2"


class TestAugment:
    def test_single_event_offsets_zero(self):
        pset = augment(build_pillars(window_of([Event(3, 4, 100, 1)]), PillarConfig(max_pillars=2), 1))
        assert not pset.features[0, 0, 3:].any()

    def test_symmetric_time_offsets(self):
        ev = [Event(0, 0, 10_000, 1), Event(0, 0, 20_000, 1)]
        pset = augment(build_pillars(window_of(ev), PillarConfig(max_pillars=2), 1))
        np.testing.assert_allclose(pset.features[0, :2, 5], [-0.1, 0.1], atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 6))
    def test_offsets_sum_to_zero_and_recompute(self, seed, m):
        w = random_window(SensorGeometry(4, 4), 200, seed=seed)
        pset = augment(build_pillars(w, PillarConfig(max_events=m, max_pillars=32, seed=seed), 1))
        for k in range(pset.n_pillars):
            c = pset.counts[k]
            f = pset.features[k, :c]
            assert np.abs(f[:, 3:].sum(axis=0)).max() < 1e-12
            assert np.abs(f[:, 3:] - (f[:, :3] - f[:, :3].mean(axis=0))).max() < 1e-12
            assert 0 < c <= m


class TestStats:
    def test_empty(self):
        s = pillar_stats(build_pillars(window_of([]), PillarConfig(max_pillars=2), 1))
        assert (s.non_empty, s.retained, s.dropped) == (0, 0, 0)

    def test_three_event_example(self):
        s = pillar_stats(build_pillars(window_of(TestBuildPillars.EVENTS), PillarConfig(max_pillars=4), 1))
        assert (s.non_empty, s.retained, s.dropped) == (1, 2, 0)

    def test_cap_drop(self):
        ev = [Event(3, 3, t, 1) for t in range(7)]
        s = pillar_stats(build_pillars(window_of(ev), PillarConfig(max_events=5, max_pillars=2), 1))
        assert s.dropped == 2 and s.dropped_by_cap == 2 and s.dropped_by_limit == 0

    def test_consistent_with_counts(self):
        w = random_window(SensorGeometry(5, 5), 2000, seed=3)
        pset = build_pillars(w, PillarConfig(max_events=4, max_pillars=10), -1)
        s = pillar_stats(pset)
        assert s.retained == pset.counts.sum()
        assert s.retained + s.dropped == (w.events.p == -1).sum()
        assert s.dropped == s.dropped_by_cap + s.dropped_by_limit
