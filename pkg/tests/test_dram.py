import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tensix_sim.dram import (ALIGNMENT, Dram, DramConfig, DramError, FaultKind, Interleaved, InvalidPageSize,
                             OutOfBounds, OutOfMemory, SingleBank, UnalignedWrite, WriteMode, align_down,
                             align_up)


class TestAllocate:
    def test_single_bank_aligned_and_zeroed(self):
        d = Dram()
        d.allocate(SingleBank(0), 7)
        b = d.allocate(SingleBank(0), 64)
        assert b.base_address % 32 == 0
        assert not b.data.any()

    def test_interleaved_pages_round_robin(self):
        b = Dram().allocate(Interleaved(16384), 4 * 16384)
        banks = [b.bank_of(b.base_address + i * 16384) for i in range(4)]
        assert banks == [0, 1, 2, 3]

    def test_second_interleaved_buffer_continues_rotation(self):
        d = Dram()
        d.allocate(Interleaved(1024), 3 * 1024)
        b = d.allocate(Interleaved(1024), 2 * 1024)
        assert [b.bank_of(b.base_address + i * 1024) for i in range(2)] == [3, 4]

    @pytest.mark.parametrize("size", [0, 65537, 65536 + 32, 100])
    def test_invalid_page_size(self, size):
        with pytest.raises(InvalidPageSize):
            Interleaved(size)

    def test_max_page_size_ok(self):
        assert Interleaved(65536).page_size == 65536

    def test_out_of_memory(self):
        d = Dram(DramConfig(bank_size=1024))
        d.allocate(SingleBank(1), 1000)
        with pytest.raises(OutOfMemory):
            d.allocate(SingleBank(1), 100)

    def test_bad_requests(self):
        with pytest.raises(DramError):
            Dram().allocate(SingleBank(0), 0)
        with pytest.raises(DramError):
            Dram().allocate(SingleBank(9), 32)
        with pytest.raises(ValueError):
            DramConfig(alignment=24)
        with pytest.raises(ValueError):
            DramConfig(bank_count=0)

    def test_segments_split_at_pages(self):
        b = Dram().allocate(Interleaved(1024), 8192)
        segs = b.segments(b.base_address + 1000, 100)
        assert [(s[0], s[2]) for s in segs] == [(0, 24), (1, 76)]

    def test_resolve_inverts_bank_local(self):
        d = Dram()
        d.allocate(SingleBank(2), 4096)
        b = d.allocate(Interleaved(2048), 40000)
        for addr in range(b.base_address, b.end_address, 997):
            bank, local = b.bank_local(addr)
            assert d.resolve(bank, local) == (b, addr)


class TestAccess:
    def test_aligned_read_exact(self):
        d = Dram()
        b = d.allocate(SingleBank(0), 256)
        d.host_write(b, 0, np.arange(256, dtype=np.uint8))
        data, fault = d.raw_read(b, b.base_address + 32, 64)
        assert fault is None
        assert np.array_equal(data, np.arange(32, 96, dtype=np.uint8))

    def test_unaligned_read_returns_aligned_down_bytes(self):
        d = Dram()
        b = d.allocate(SingleBank(0), 256)
        oracle = bytes(range(256))
        d.host_write(b, 0, np.frombuffer(oracle, dtype=np.uint8))
        base = b.base_address
        data, fault = d.raw_read(b, base + 2, 68)
        assert bytes(data) == oracle[0:68]
        assert fault.kind is FaultKind.UNALIGNED_READ
        assert (fault.requested_address, fault.effective_address) == (base + 2, base)

    def test_fault_is_deterministic(self):
        d = Dram()
        b = d.allocate(SingleBank(0), 256)
        d.host_write(b, 0, np.arange(256, dtype=np.uint8))
        first = d.raw_read(b, b.base_address + 50, 40)
        second = d.raw_read(b, b.base_address + 50, 40)
        assert np.array_equal(first[0], second[0]) and first[1] == second[1]

    def test_aligned_tile_row_write(self):
        d = Dram()
        b = d.allocate(SingleBank(0), 4096)
        row = np.arange(2048, dtype=np.uint8)
        assert d.raw_write(b, b.base_address + 2048, row) is None
        assert np.array_equal(d.host_read(b, 2048, 2048), row)

    def test_strict_unaligned_write_rejected(self):
        d = Dram()
        b = d.allocate(SingleBank(0), 256)
        with pytest.raises(UnalignedWrite):
            d.raw_write(b, b.base_address + 2, b"\x01\x02")

    def test_permissive_write_lands_aligned_down(self):
        d = Dram(DramConfig(write_mode=WriteMode.PERMISSIVE_CORRUPTING))
        b = d.allocate(SingleBank(0), 256)
        fault = d.raw_write(b, b.base_address + 2, b"\x07\x08")
        assert d.host_read(b, 0, 4).tolist() == [7, 8, 0, 0]
        assert fault.kind is FaultKind.UNALIGNED_WRITE
        assert fault.effective_address == b.base_address

    def test_out_of_bounds(self):
        d = Dram()
        b = d.allocate(SingleBank(0), 64)
        with pytest.raises(OutOfBounds):
            d.raw_read(b, b.base_address + 32, 64)
        with pytest.raises(OutOfBounds):
            d.raw_write(b, b.base_address - 32, b"\x00" * 32)

    def test_halo_rows_of_power_of_two_row_fault_from_row_one(self):
        """34 halo reads over an unpadded row of 512 + 2 elements: row 0 is
        aligned and clean, the first corrupted row is row 1."""
        d = Dram()
        nx = 512
        pitch = 2 * (nx + 2)
        b = d.allocate(SingleBank(0), pitch * 40)
        rng = np.random.default_rng(0)
        oracle = rng.integers(0, 256, pitch * 40, dtype=np.uint8)
        d.host_write(b, 0, oracle)
        wrong = []
        faults = []
        for k in range(34):
            addr = b.base_address + k * pitch
            data, fault = d.raw_read(b, addr, 68)
            wrong.append(not np.array_equal(data, oracle[k * pitch:k * pitch + 68]))
            faults.append(fault is not None)
        assert not wrong[0] and not faults[0]
        assert wrong.index(True) == 1
        assert faults == wrong
        assert [k for k in range(34) if not faults[k]] == [0, 8, 16, 24, 32]

    def test_export_import(self, tmp_path):
        d = Dram()
        b = d.allocate(SingleBank(0), 100)
        d.host_write(b, 0, np.arange(100, dtype=np.uint8))
        d.export_buffer(b, tmp_path / "b.bin")
        c = d.allocate(SingleBank(1), 100)
        d.import_buffer(c, tmp_path / "b.bin")
        assert np.array_equal(c.data, b.data)
        assert (tmp_path / "b.bin").read_bytes() == bytes(range(100))
        with pytest.raises(DramError):
            d.import_buffer(d.allocate(SingleBank(0), 10), tmp_path / "b.bin")


def test_aligned_round_trip_fuzz_10k():
    rng = np.random.default_rng(2024)
    placements = [SingleBank(0), SingleBank(5), Interleaved(1024), Interleaved(4096), Interleaved(65536)]
    d = Dram()
    bufs = [d.allocate(p, 1 << 18) for p in placements]
    shadows = [np.zeros(1 << 18, dtype=np.uint8) for _ in bufs]
    for _ in range(10_000):
        i = int(rng.integers(len(bufs)))
        b, shadow = bufs[i], shadows[i]
        length = int(rng.integers(1, 4096))
        off = align_down(int(rng.integers(0, b.length - length)), ALIGNMENT)
        data = rng.integers(0, 256, length, dtype=np.uint8)
        assert d.raw_write(b, b.base_address + off, data) is None
        shadow[off:off + length] = data
        back, fault = d.raw_read(b, b.base_address + off, length)
        assert fault is None and np.array_equal(back, data)
    for b, shadow in zip(bufs, shadows):
        assert np.array_equal(b.data, shadow)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from([1024, 2048, 8192, 65536]), st.integers(0, 20000), st.binary(min_size=1, max_size=3000))
def test_interleaving_is_transparent(page, offset, payload):
    d = Dram()
    single = d.allocate(SingleBank(0), 32768)
    inter = d.allocate(Interleaved(page), 32768)
    off = align_down(offset, ALIGNMENT)
    for b in (single, inter):
        d.raw_write(b, b.base_address + off, payload)
    a, _ = d.raw_read(single, single.base_address + off, len(payload))
    c, _ = d.raw_read(inter, inter.base_address + off, len(payload))
    assert bytes(a) == bytes(c) == payload


@given(st.integers(0, 10 ** 9), st.sampled_from([32, 64, 256]))
def test_align_helpers(n, a):
    assert align_down(n, a) <= n < align_down(n, a) + a
    assert align_up(n, a) >= n and align_up(n, a) % a == 0
