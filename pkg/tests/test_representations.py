import math

import numpy as np
import pytest

from evpk import representations as R
from evpk.events import Event, EventStream, EventWindow, SensorGeometry, random_window

GEOM = SensorGeometry(16, 12)
DELTA = 50_000


def window_of(events, geometry=GEOM, t_start=0, delta=DELTA):
    return EventWindow(EventStream.from_events(events, geometry), t_start, t_start + delta)


def naive_pixel_lists(window):
    """Per-(pixel, polarity) chronological lists of normalized times."""
    out = {}
    for e in window.events:
        out.setdefault((e.y, e.x, e.p), []).append((e.t - window.t_start) / window.duration)
    return out


class TestEventFrame:
    def test_single_event(self):
        g = R.event_frame(window_of([Event(2, 3, 0, 1)])).data
        assert g[3, 2, 0] == 1 and np.count_nonzero(g) == 1

    def test_cancellation(self):
        g = R.event_frame(window_of([Event(1, 1, 0, 1), Event(1, 1, 5, -1)])).data
        assert not g.any()

    def test_sum_equals_polarity_sum(self):
        w = random_window(GEOM, 1000, seed=1)
        assert R.event_frame(w).data.sum() == w.events.p.sum()


class TestEventCount:
    def test_three_positive(self):
        g = R.event_count(window_of([Event(4, 5, t, 1) for t in (1, 2, 3)])).data
        assert g[5, 4, 0] == 3 and g[..., 1].sum() == 0

    def test_empty(self):
        g = R.event_count(window_of([])).data
        assert g.shape == (12, 16, 2) and not g.any()

    def test_total(self):
        w = random_window(GEOM, 1000, seed=2)
        assert R.event_count(w).data.sum() == 1000


class TestTimestampImage:
    def test_midpoint(self):
        g = R.timestamp_image(window_of([Event(0, 0, DELTA // 2, 1)])).data
        assert g[0, 0, 0] == 0.5

    def test_later_wins(self):
        g = R.timestamp_image(window_of([Event(0, 0, 10_000, -1), Event(0, 0, 40_000, -1)])).data
        assert g[0, 0, 1] == pytest.approx(0.8)

    def test_range(self):
        g = R.timestamp_image(random_window(GEOM, 10**4, seed=3)).data
        assert g.min() >= 0 and g.max() < 1


class TestTimeSurface:
    def test_near_end(self):
        g = R.time_surface(window_of([Event(0, 0, DELTA - 1, 1)]), tau_decay=1e6).data
        assert abs(g[0, 0, 0] - 1.0) < 1e-5

    def test_one_tau(self):
        tau = 20_000
        g = R.time_surface(window_of([Event(0, 0, DELTA - tau, 1)]), tau_decay=tau).data
        assert g[0, 0, 0] == pytest.approx(math.exp(-1), abs=1e-12)

    def test_range_and_default_tau(self):
        w = random_window(GEOM, 10**4, seed=4)
        g = R.time_surface(w).data
        assert g.min() >= 0 and g.max() <= 1
        np.testing.assert_array_equal(g, R.time_surface(w, DELTA).data)

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            R.time_surface(window_of([]), tau_decay=0)


class TestEvSegnetStats:
    def test_single_event_std_zero(self):
        g = R.ev_segnet_stats(window_of([Event(1, 1, 10_000, 1)])).data
        assert g[1, 1, 0] == 1 and g[1, 1, 1] == pytest.approx(0.2) and g[1, 1, 2] == 0

    def test_mean_of_two(self):
        g = R.ev_segnet_stats(window_of([Event(1, 1, 10_000, -1), Event(1, 1, 20_000, -1)])).data
        assert g[1, 1, 4] == pytest.approx(0.3, abs=1e-15)

    def test_against_naive_lists(self):
        w = random_window(GEOM, 1000, seed=5)
        g = R.ev_segnet_stats(w).data
        ref = np.zeros_like(g)
        for (y, x, p), ts in naive_pixel_lists(w).items():
            base = 0 if p > 0 else 3
            mean = sum(ts) / len(ts)
            ref[y, x, base] = len(ts)
            ref[y, x, base + 1] = mean
            ref[y, x, base + 2] = math.sqrt(sum((t - mean) ** 2 for t in ts) / len(ts))
        assert np.abs(g - ref).max() < 1e-12


class TestVoxelGrid:
    def test_bin_center(self):
        # B = 5 puts bin centers at t_hat = k / 4
        g = R.voxel_grid(window_of([Event(0, 0, DELTA // 2, 1)]), 5).data
        assert g[0, 0].tolist() == [0, 0, 1, 0, 0]

    def test_midway_split(self):
        g = R.voxel_grid(window_of([Event(0, 0, DELTA // 8, -1)]), 5).data
        np.testing.assert_allclose(g[0, 0], [-0.5, -0.5, 0, 0, 0], atol=1e-15)

    def test_per_event_oracle(self):
        w = random_window(GEOM, 1000, seed=6)
        bins = 4
        ref = np.zeros((12, 16, bins))
        for e in w.events:
            tb = (e.t - w.t_start) / w.duration * (bins - 1)
            lo = int(math.floor(tb))
            frac = tb - lo
            ref[e.y, e.x, lo] += e.p * (1 - frac)
            if frac > 0:
                ref[e.y, e.x, lo + 1] += e.p * frac
        g = R.voxel_grid(w, bins).data
        assert np.abs(g - ref).max() < 1e-12
        assert abs(g.sum() - w.events.p.sum()) < 1e-9 * len(w)


class TestInvariants:
    @pytest.mark.parametrize("seed", range(5))
    def test_frame_equals_count_difference(self, seed):
        w = random_window(GEOM, 2000, seed=seed)
        c = R.event_count(w).data
        np.testing.assert_array_equal(R.event_frame(w).data[..., 0], c[..., 0] - c[..., 1])

    @pytest.mark.parametrize("seed", range(5))
    def test_voxel_single_bin_equals_frame(self, seed):
        w = random_window(GEOM, 2000, seed=seed)
        np.testing.assert_array_equal(R.voxel_grid(w, 1).data, R.event_frame(w).data)

    @pytest.mark.parametrize("kind", R.KINDS)
    def test_finite_and_framed(self, kind):
        cfg = R.ReprConfig(kind, bins=3)
        g = R.build(random_window(GEOM, 500, seed=9), cfg)
        assert g.shape == (12, 16, cfg.channels())
        assert np.all(np.isfinite(g.data))

    @pytest.mark.parametrize("kind", ["event_frame", "event_count", "ev_segnet_stats", "voxel_grid"])
    def test_reordering_same_timestamp_events(self, kind):
        events = [Event(1, 2, 5, 1), Event(1, 2, 5, -1), Event(3, 3, 5, 1), Event(1, 2, 9, 1)]
        a = R.build(window_of(events), R.ReprConfig(kind))
        b = R.build(window_of([events[2], events[1], events[0], events[3]]), R.ReprConfig(kind))
        np.testing.assert_array_equal(a.data, b.data)


class TestConfig:
    def test_unknown_kind_lists_valid(self):
        with pytest.raises(ValueError, match="voxel_grid"):
            R.ReprConfig("bogus")

    def test_bins_positive(self):
        with pytest.raises(ValueError):
            R.ReprConfig("voxel_grid", bins=0)


class TestGTN:
    def test_round_trip_bit_exact(self, tmp_path):
        data = np.random.default_rng(0).normal(size=(12, 16, 5)).astype(np.float32)
        R.write_grid(R.GridTensor(data), tmp_path / "g.gtn")
        back = R.read_grid(tmp_path / "g.gtn").data
        assert back.dtype == np.float32 and back.tobytes() == data.tobytes()

    def test_layout(self, tmp_path):
        data = np.arange(6, dtype=np.float32).reshape(1, 2, 3)
        R.write_grid(data, tmp_path / "g.gtn")
        raw = (tmp_path / "g.gtn").read_bytes()
        assert raw[:10] == b"GTN1" + bytes([1, 0, 2, 0, 3, 0])
        assert np.frombuffer(raw[10:], "<f4").tolist() == list(range(6))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "g.gtn").write_bytes(b"XXXX")
        with pytest.raises(ValueError, match="magic"):
            R.read_grid(tmp_path / "g.gtn")
