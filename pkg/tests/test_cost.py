import math

import pytest
from hypothesis import given, settings, strategies as st

from tensix_sim import analytic
from tensix_sim.bench import BATCHES, AccessOrder, StreamConfig, SyncMode
from tensix_sim.cost import (INTERLEAVE_PAGES, CostParams, default_params, energy, gpt_per_s,
                             predict_transaction)
from tensix_sim.dram import Interleaved, SingleBank

P = default_params()


class TestParams:
    def test_file_round_trip(self, tmp_path):
        P.save(tmp_path / "p.txt")
        assert CostParams.load(tmp_path / "p.txt") == P

    def test_keys_are_field_names(self):
        keys = [line.split("=")[0] for line in P.dumps().splitlines()]
        assert keys[:3] == ["read_req_ns", "write_req_ns", "read_byte_ns"]
        assert "power_watts" in keys
        assert [k for k in keys if k.startswith("interleave_factor_")] == \
            [f"interleave_factor_{p}" for p in INTERLEAVE_PAGES]

    def test_comments_and_blank_lines(self):
        p = CostParams.loads("# header\n\nread_req_ns = 7  # inline\n")
        assert p.read_req_ns == 7.0

    @pytest.mark.parametrize("text", ["bogus=1\n", "read_req_ns\n", "read_req_ns=-1\n", "bank_bw_bytes_per_s=0\n"])
    def test_rejects_bad_files(self, text):
        with pytest.raises(ValueError):
            CostParams.loads(text)

    def test_default_power(self):
        assert P.power_watts == 52.0

    def test_default_params_fresh_copy(self):
        a = default_params()
        a.read_req_ns = 0.0
        assert default_params().read_req_ns == P.read_req_ns

    def test_page_factor_interpolates_in_log_space(self):
        p = CostParams(interleave_factor={1024: 1.0, 4096: 3.0})
        assert p.page_factor(2048) == pytest.approx(2.0)
        assert p.page_factor(None) == 1.0


class TestTransaction:
    def test_one_byte_unsynced(self):
        assert predict_transaction(P, "read", 1) == pytest.approx(P.read_req_ns + P.read_byte_ns)

    def test_formula(self):
        got = predict_transaction(P, "write", 100, contiguous=False, synced=True)
        want = P.write_req_ns + 100 * P.write_byte_ns + P.write_sync_roundtrip_ns + P.noncontig_req_ns
        assert got == pytest.approx(want)

    def test_zero_length_forbidden(self):
        with pytest.raises(ValueError):
            predict_transaction(P, "read", 0)
        with pytest.raises(ValueError):
            predict_transaction(P, "copy", 4)

    def test_table3_batch4_sync_anchor(self):
        # 4096 rows x 4096 reads of 4 bytes, each synced
        total = 4096 * 4096 * predict_transaction(P, "read", 4, synced=True) * 1e-9
        assert 12.659 / 2.5 <= total <= 12.659 * 2.5

    def test_table3_batch16384_nosync_anchor(self):
        assert analytic.stream_seconds(StreamConfig(), P) == pytest.approx(0.011, rel=0.5)

    @given(st.sampled_from(["read", "write"]), st.integers(1, 1 << 16), st.booleans(),
           st.sampled_from([None] + list(INTERLEAVE_PAGES)))
    def test_sync_and_contiguity_never_cheaper(self, kind, length, contiguous, page):
        base = predict_transaction(P, kind, length, True, False, page)
        assert predict_transaction(P, kind, length, contiguous, True, page) >= \
            predict_transaction(P, kind, length, contiguous, False, page)
        assert predict_transaction(P, kind, length, False, False, page) >= base


class TestMonotonicity:
    @pytest.mark.parametrize("order", list(AccessOrder))
    @pytest.mark.parametrize("sync", list(SyncMode))
    @pytest.mark.parametrize("direction", ["read", "write"])
    def test_runtime_non_increasing_in_batch(self, order, sync, direction):
        times = [analytic.stream_seconds(StreamConfig(batch_size=b, sync_mode=sync, access_order=order,
                                                      direction=direction), P) for b in BATCHES]
        # BATCHES runs from large to small
        assert all(a <= b * (1 + 1e-12) for a, b in zip(times, times[1:]))

    @pytest.mark.parametrize("order", list(AccessOrder))
    @pytest.mark.parametrize("direction", ["read", "write"])
    @pytest.mark.parametrize("batch", BATCHES)
    def test_sync_per_access_not_faster(self, order, direction, batch):
        kw = dict(batch_size=batch, access_order=order, direction=direction)
        assert analytic.stream_seconds(StreamConfig(sync_mode=SyncMode.PER_ACCESS, **kw), P) >= \
            analytic.stream_seconds(StreamConfig(sync_mode=SyncMode.PER_ROW, **kw), P)

    @pytest.mark.parametrize("direction", ["read", "write"])
    @pytest.mark.parametrize("batch", BATCHES)
    def test_contiguous_not_slower_per_access(self, direction, batch):
        kw = dict(batch_size=batch, sync_mode=SyncMode.PER_ACCESS, direction=direction)
        assert analytic.stream_seconds(StreamConfig(access_order=AccessOrder.CONTIGUOUS, **kw), P) <= \
            analytic.stream_seconds(StreamConfig(access_order=AccessOrder.COLUMN_MAJOR, **kw), P)

    def test_replication_two_measurably_slower(self):
        r1 = analytic.stream_seconds(StreamConfig(replication=1), P)
        r2 = analytic.stream_seconds(StreamConfig(replication=2), P)
        assert r2 > 1.2 * r1

    def test_interleaving_helps_replicated_and_bounded_unreplicated(self):
        single = [analytic.stream_seconds(StreamConfig(replication=r), P) for r in (1, 32)]
        for page in (16384, 32768):
            inter = [analytic.stream_seconds(StreamConfig(replication=r, placement=Interleaved(page)), P)
                     for r in (1, 32)]
            assert inter[0] <= 2.0 * single[0]
            assert inter[1] <= 0.6 * single[1]


class TestEnergyAndRate:
    def test_zero_seconds(self):
        assert energy(P, 0.0) == 0.0

    def test_108_core_row(self):
        secs = 9216 * 1024 * 5000 / 22.06e9
        assert energy(P.replace(power_watts=51.6), secs) == pytest.approx(110, rel=0.02)

    def test_1_core_row(self):
        secs = 9216 * 1024 * 5000 / 1.06e9
        assert secs == pytest.approx(44.5, rel=0.01)
        assert energy(P.replace(power_watts=47.3), secs) == pytest.approx(2094, rel=0.01)

    @given(st.floats(0, 1e6), st.floats(0, 1e3))
    def test_energy_exactly_linear(self, secs, watts):
        assert energy(P.replace(power_watts=watts), secs) == watts * secs

    def test_negative_time(self):
        with pytest.raises(ValueError):
            energy(P, -1.0)

    def test_gpt_cpu_anchor(self):
        assert gpt_per_s(262144, 10000, 1.86) == pytest.approx(1.41, rel=0.01)

    def test_gpt_trivial(self):
        assert gpt_per_s(1, 1, 1.0) == 1e-9
        with pytest.raises(ValueError):
            gpt_per_s(1, 1, 0.0)

    def test_table8_cross_check(self):
        secs = 9216 * 1024 * 5000 / 1.06e9
        assert gpt_per_s(9216 * 1024, 5000, secs) == pytest.approx(1.06)
