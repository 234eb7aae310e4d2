import numpy as np
import pytest
from PIL import Image

from clickstorm import bruteforce, synthetic
from clickstorm.clickgen import Click
from clickstorm.segmenters import OracleSegmenter, Segmenter, SegmenterRequest


def flat_image(h, w):
    return np.full((h, w, 3), 0.5)


class FlakySegmenter(Segmenter):
    """Fails on specific positions; used to exercise per-cell failure capture."""

    def __init__(self, gt, bad):
        self.gt = gt
        self.bad = bad
        self.radius = 2.0

    def _predict(self, req):
        c = req.clicks[-1]
        if (c.x, c.y) in self.bad:
            raise RuntimeError("transient")
        return self.gt.astype(float)


class TestGridSearch:
    def test_oracle_grid_is_one_on_valid_cells(self):
        gt = np.zeros((12, 12), bool)
        gt[3:9, 3:9] = True
        seg = OracleSegmenter(gt, radius=2.0)
        grid = bruteforce.grid_search(seg, flat_image(12, 12), gt, positive=True, stride=1)
        assert grid.valid_mask.any()
        assert np.all(grid.iou_grid[grid.valid_mask] == 1.0)
        assert grid.iou_min == grid.iou_max == 1.0

    def test_stride_ceiling_dimensions(self):
        gt = np.zeros((33, 33), bool)
        gt[10:20, 10:20] = True
        seg = OracleSegmenter(gt, radius=2.0)
        grid = bruteforce.grid_search(seg, flat_image(33, 33), gt, stride=2)
        assert grid.iou_grid.shape == (17, 17)
        assert grid.valid_mask.shape == (17, 17)

    def test_valid_mask_matches_error_region(self):
        gt = np.zeros((10, 10), bool)
        gt[2:5, 2:5] = True
        seg = OracleSegmenter(gt, radius=2.0)
        grid = bruteforce.grid_search(seg, flat_image(10, 10), gt, positive=True, stride=1)
        assert np.array_equal(grid.valid_mask, gt)

    def test_cell_failures_do_not_abort(self):
        gt = np.zeros((8, 8), bool)
        gt[2:6, 2:6] = True
        seg = FlakySegmenter(gt, bad={(3.0, 3.0), (0.0, 0.0)})
        grid = bruteforce.grid_search(seg, flat_image(8, 8), gt, stride=1)
        assert len(grid.failures) == 2
        assert np.isnan(grid.iou_grid[3, 3])
        assert np.isnan(grid.iou_grid[0, 0])
        assert np.isfinite(grid.iou_grid[4, 4])
        # extrema are still defined from the surviving valid cells
        assert grid.iou_min == grid.iou_max == 1.0

    def test_monotone_refinement_never_shrinks_spread(self):
        # halving an even stride keeps all previous grid positions
        for i in range(4):
            image, gt = synthetic.make_sample(0, i, 32)
            from clickstorm.segmenters import BlobSegmenter, RuggedSegmenter
            seg = RuggedSegmenter(BlobSegmenter(radius=3.0), seed=0)
            coarse = bruteforce.grid_search(seg, image, gt, stride=4)
            fine = bruteforce.grid_search(seg, image, gt, stride=2)
            if coarse.iou_min is None:
                continue
            spread_coarse = coarse.iou_max - coarse.iou_min
            spread_fine = fine.iou_max - fine.iou_min
            assert spread_fine >= spread_coarse - 1e-12

    def test_no_valid_cells_leaves_extrema_none(self):
        gt = np.zeros((6, 6), bool)
        gt[2:4, 2:4] = True
        seg = OracleSegmenter(gt, radius=2.0)
        # negative polarity on the first interaction: no false positives yet
        grid = bruteforce.grid_search(seg, flat_image(6, 6), gt, positive=False, stride=1)
        assert not grid.valid_mask.any()
        assert grid.iou_min is None and grid.global_max is None


class TestAutoStride:
    def test_small_images_use_stride_one(self):
        assert bruteforce.auto_stride(128, 128) == 1

    def test_large_images_bounded_cells(self):
        s = bruteforce.auto_stride(1024, 1024)
        assert s > 1
        assert np.ceil(1024 / s) * np.ceil(1024 / s) <= bruteforce.MAX_AUTO_CELLS
        assert np.ceil(1024 / (s - 1)) * np.ceil(1024 / (s - 1)) > bruteforce.MAX_AUTO_CELLS


class TestHeatmap:
    def _grid(self, values, valid=None):
        values = np.asarray(values, dtype=np.float64)
        if valid is None:
            valid = np.ones_like(values, dtype=bool)
        return bruteforce.GridResult(stride=1, iou_grid=values, biou_grid=values,
                                     valid_mask=valid)

    def test_constant_one_is_uniform_warmest(self, tmp_path):
        grid = self._grid(np.ones((5, 7)))
        path = tmp_path / "hot.png"
        bruteforce.write_heatmap(grid, "iou", path)
        arr = np.asarray(Image.open(path))
        assert arr.shape == (5, 7, 3)
        assert np.all(arr == np.array([200, 0, 0], dtype=np.uint8))

    def test_constant_zero_is_uniform_coldest(self, tmp_path):
        grid = self._grid(np.zeros((4, 4)))
        path = tmp_path / "cold.png"
        bruteforce.write_heatmap(grid, "iou", path)
        arr = np.asarray(Image.open(path))
        assert np.all(arr == np.array([0, 0, 140], dtype=np.uint8))

    def test_png_dimensions_equal_grid(self, tmp_path):
        grid = self._grid(np.random.default_rng(0).random((9, 13)))
        path = tmp_path / "map.png"
        bruteforce.write_heatmap(grid, "iou", path)
        assert np.asarray(Image.open(path)).shape[:2] == (9, 13)

    def test_sidecar_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        values = rng.random((6, 6))
        values[2, 4] = np.nan  # failed cell
        valid = rng.random((6, 6)) < 0.5
        grid = self._grid(values, valid)
        path = tmp_path / "grid.png"
        bruteforce.write_heatmap(grid, "biou", path)
        loaded, loaded_valid, stride = bruteforce.load_sidecar(str(path) + ".json")
        assert stride == 1
        assert np.array_equal(loaded_valid, valid)
        same = np.isnan(loaded) == np.isnan(values)
        assert same.all()
        mask = ~np.isnan(values)
        assert np.array_equal(loaded[mask], values[mask])

    def test_unknown_channel_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            bruteforce.write_heatmap(self._grid(np.ones((2, 2))), "f1", tmp_path / "x.png")


class TestSpread:
    def test_all_equal_is_zero(self):
        assert bruteforce.spread([0.4, 0.4, 0.4]) == 0.0

    def test_two_values(self):
        assert bruteforce.spread([0.2, 0.9]) == pytest.approx(0.7)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            bruteforce.spread([])
