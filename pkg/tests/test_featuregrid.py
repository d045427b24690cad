"""Detection decoding, bilinear sampling, and the XSFM grid format."""

import numpy as np
import pytest

from oracles import bilinear_brute
from xspecreg.errors import OutOfBounds, ShapeMismatch
from xspecreg.featuregrid import (
    DescriptorMap,
    DetectionResponse,
    DetectorTarget,
    Heatmap,
    bilinear_sample_descriptor,
    bilinear_sample_scalar,
    decode_heatmap,
    pack_cells,
    read_xsfm,
    unpack_cells,
    write_xsfm,
)


class TestDecodeHeatmap:
    def test_uniform_logits(self):
        heat = decode_heatmap(DetectionResponse(np.zeros((2, 3, 65))))
        np.testing.assert_allclose(heat.values, 1.0 / 65.0, atol=1e-12)

    def test_single_peak(self):
        logits = np.zeros((2, 2, 65))
        logits[0, 0, 0] = 10.0
        heat = decode_heatmap(DetectionResponse(logits))
        expected = np.e**10 / (np.e**10 + 64)
        assert heat.values[0, 0] == pytest.approx(expected, abs=1e-9)

    def test_dustbin_dominates(self):
        logits = np.zeros((1, 1, 65))
        logits[0, 0, 64] = 20.0
        heat = decode_heatmap(DetectionResponse(logits))
        assert np.all(heat.values < 1e-8)

    def test_cell_mass_conservation(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((3, 4, 65))
        resp = DetectionResponse(logits)
        heat = decode_heatmap(resp)
        cells = pack_cells(heat.values)
        z = logits - logits.max(axis=2, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=2, keepdims=True)
        np.testing.assert_allclose(cells.sum(axis=2), 1.0 - p[:, :, 64], atol=1e-6)

    def test_unpack_order(self):
        # channel k lands at (row k // 8, col k % 8) inside its cell
        cells = np.zeros((1, 1, 64))
        cells[0, 0, 11] = 1.0
        dense = unpack_cells(cells)
        assert dense[1, 3] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            DetectionResponse(np.zeros((2, 2, 64)))


class TestBilinearScalar:
    def test_exact_on_grid(self):
        rng = np.random.default_rng(1)
        grid = Heatmap(rng.random((6, 7)))
        assert bilinear_sample_scalar(grid, 3.0, 2.0) == grid.values[2, 3]

    def test_midpoint_average(self):
        values = np.zeros((2, 2))
        values[0, 0], values[0, 1] = 0.2, 0.6
        assert bilinear_sample_scalar(Heatmap(values), 0.5, 0.0) == pytest.approx(0.4)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        values = rng.random((9, 11))
        heat = Heatmap(values)
        for _ in range(50):
            u = rng.uniform(0, 10)
            v = rng.uniform(0, 8)
            assert bilinear_sample_scalar(heat, u, v) == pytest.approx(
                bilinear_brute(values, u, v), abs=1e-12
            )

    def test_exact_on_affine_field(self):
        u_grid, v_grid = np.meshgrid(np.arange(8), np.arange(6))
        values = 0.3 * u_grid + 0.1 * v_grid + 0.05
        heat = Heatmap(values / values.max())
        rng = np.random.default_rng(3)
        for _ in range(20):
            u, v = rng.uniform(0, 7), rng.uniform(0, 5)
            expected = (0.3 * u + 0.1 * v + 0.05) / values.max()
            assert bilinear_sample_scalar(heat, u, v) == pytest.approx(expected, abs=1e-10)

    def test_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            bilinear_sample_scalar(Heatmap(np.zeros((4, 4))), -0.1, 0.0)


class TestBilinearDescriptor:
    def make_map(self, rng, hc=4, wc=5, c=8):
        d = rng.standard_normal((hc, wc, c))
        d /= np.linalg.norm(d, axis=2, keepdims=True)
        return DescriptorMap(d)

    def test_cell_center_exact(self):
        rng = np.random.default_rng(4)
        dmap = self.make_map(rng)
        np.testing.assert_allclose(
            bilinear_sample_descriptor(dmap, 8 + 3.5, 16 + 3.5),
            dmap.values[2, 1],
            atol=1e-12,
        )

    def test_midway_orthogonal(self):
        vals = np.zeros((1, 2, 4))
        vals[0, 0, 0] = 1.0
        vals[0, 1, 1] = 1.0
        dmap = DescriptorMap(vals)
        out = bilinear_sample_descriptor(dmap, 3.5 + 4.0, 3.5)
        np.testing.assert_allclose(out, [1 / np.sqrt(2), 1 / np.sqrt(2), 0, 0], atol=1e-12)

    def test_constant_field(self):
        d = np.zeros((3, 3, 4))
        d[:, :, 2] = 1.0
        dmap = DescriptorMap(d)
        rng = np.random.default_rng(5)
        for _ in range(10):
            out = bilinear_sample_descriptor(
                dmap, rng.uniform(0, 23), rng.uniform(0, 23)
            )
            np.testing.assert_allclose(out, [0, 0, 1, 0], atol=1e-12)

    def test_unit_norm_output(self):
        rng = np.random.default_rng(6)
        dmap = self.make_map(rng)
        for _ in range(30):
            out = bilinear_sample_descriptor(
                dmap, rng.uniform(0, 39), rng.uniform(0, 31)
            )
            assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-6)

    def test_non_unit_map_rejected(self):
        with pytest.raises(ShapeMismatch):
            DescriptorMap(np.full((2, 2, 4), 0.3))


class TestDetectorTarget:
    def test_from_labels(self):
        t = DetectorTarget.from_labels(np.array([[3, 64], [0, 12]]))
        assert t.one_hot.shape == (2, 2, 65)
        np.testing.assert_array_equal(t.labels, [[3, 64], [0, 12]])

    def test_rejects_multi_hot(self):
        bad = np.zeros((1, 1, 65))
        bad[0, 0, 1] = bad[0, 0, 2] = 1.0
        with pytest.raises(ShapeMismatch):
            DetectorTarget(bad)


class TestXsfm:
    def test_round_trip_3d(self, tmp_path):
        rng = np.random.default_rng(7)
        arr = rng.standard_normal((4, 5, 65)).astype(np.float32)
        path = tmp_path / "grid.xsfm"
        write_xsfm(path, arr)
        back = read_xsfm(path)
        assert back.shape == (4, 5, 65)
        np.testing.assert_array_equal(back.astype(np.float32), arr)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "g.xsfm"
        write_xsfm(path, np.zeros((2, 3), dtype=np.float32))
        blob = path.read_bytes()
        assert blob[:4] == b"XSFM"
        assert blob[4:6] == (1).to_bytes(2, "little")  # version
        assert blob[6] == 0  # dtype float32
        assert blob[7] == 2  # ndim
        assert int.from_bytes(blob[8:12], "little") == 2
        assert int.from_bytes(blob[12:16], "little") == 3
        assert len(blob) == 16 + 4 * 6

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.xsfm"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            read_xsfm(path)
