"""Slide-to-patch pipeline vs exhaustive/brute-force oracles.

The Otsu oracle scans all 256 thresholds computing between-class variance
from first principles; the hole-fill oracle is a hand-rolled border flood
fill; the tiling oracle counts mask bits per tile directly.
"""

import warnings

import numpy as np
import pytest

from pathohr.errors import EmptyInputError
from pathohr.patches import (
    OtsuResult,
    build_tissue_mask,
    extract_patches,
    histogram_256,
    otsu_threshold,
)
from pathohr.pgm import read_pgm, write_pgm


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def otsu_scan_oracle(hist):
    """Exhaustive scan: between-class variance at every threshold."""
    hist = np.asarray(hist, dtype=np.float64)
    total = hist.sum()
    best_var, best_t = -1.0, 0
    for t in range(256):
        w0 = hist[: t + 1].sum()
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            var = 0.0
        else:
            mu0 = (hist[: t + 1] * np.arange(t + 1)).sum() / w0
            mu1 = (hist[t + 1 :] * np.arange(t + 1, 256)).sum() / w1
            var = w0 * w1 * (mu0 - mu1) ** 2
        if var > best_var + 1e-12 * max(best_var, 1.0):
            best_var, best_t = var, t
    return best_t, best_var


def flood_fill_oracle(background):
    """Border-connected background via queue-based 4-neighbor flood fill."""
    h, w = background.shape
    seen = np.zeros_like(background)
    queue = [(r, c) for r in range(h) for c in (0, w - 1) if background[r, c]]
    queue += [(r, c) for c in range(w) for r in (0, h - 1) if background[r, c]]
    for r, c in queue:
        seen[r, c] = True
    while queue:
        r, c = queue.pop()
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < h and 0 <= cc < w and background[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                queue.append((rr, cc))
    return seen


class TestOtsu:
    def test_two_spike_histogram_smallest_tie(self):
        hist = np.zeros(256)
        hist[10] = 50
        hist[200] = 50
        res = otsu_threshold(hist)
        assert res.level == 10 and not res.degenerate

    def test_constant_image_degenerate(self):
        hist = np.zeros(256)
        hist[128] = 999
        res = otsu_threshold(hist)
        assert res == OtsuResult(0, True)

    def test_all_zero_rejected(self):
        with pytest.raises(EmptyInputError):
            otsu_threshold(np.zeros(256))

    def test_bimodal_matches_exhaustive_scan(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            lo = np.clip(rng.normal(60, 12, size=800), 0, 255).astype(int)
            hi = np.clip(rng.normal(190, 15, size=1200), 0, 255).astype(int)
            hist = np.bincount(np.concatenate([lo, hi]), minlength=256)[:256]
            want, _ = otsu_scan_oracle(hist)
            assert otsu_threshold(hist).level == want

    def test_arbitrary_histograms_match_scan_exactly(self):
        rng = np.random.default_rng(32)
        for _ in range(20):
            hist = rng.integers(0, 30, size=256)
            hist[rng.integers(0, 256)] += 200  # ensure nonzero mass
            want, _ = otsu_scan_oracle(hist)
            assert otsu_threshold(hist).level == want

    def test_histogram_256(self):
        img = np.array([[0, 0, 255], [7, 7, 7]], dtype=np.uint8)
        hist = histogram_256(img)
        assert hist[0] == 2 and hist[7] == 3 and hist[255] == 1
        assert hist.sum() == img.size


class TestTissueMask:
    def test_dark_disk_on_white(self):
        yy, xx = np.mgrid[0:40, 0:40]
        disk = (yy - 20) ** 2 + (xx - 20) ** 2 <= 100
        img = np.where(disk, 80, 240).astype(np.uint8)
        mask = build_tissue_mask(img, otsu_threshold(histogram_256(img)))
        np.testing.assert_array_equal(mask, disk)

    def test_ring_hole_filled(self):
        yy, xx = np.mgrid[0:50, 0:50]
        r2 = (yy - 25) ** 2 + (xx - 25) ** 2
        ring = (r2 <= 400) & (r2 >= 150)
        img = np.where(ring, 70, 235).astype(np.uint8)
        mask = build_tissue_mask(img, otsu_threshold(histogram_256(img)))
        # the enclosed bright center flips to tissue
        np.testing.assert_array_equal(mask, r2 <= 400)

    def test_matches_flood_fill_oracle(self):
        rng = np.random.default_rng(33)
        for _ in range(5):
            img = np.where(rng.uniform(size=(30, 30)) < 0.45, 80, 230).astype(np.uint8)
            level = otsu_threshold(histogram_256(img)).level
            mask = build_tissue_mask(img, level)
            tissue = img <= level
            border_bg = flood_fill_oracle(~tissue)
            np.testing.assert_array_equal(mask, ~border_bg)

    def test_degenerate_threshold_warns_all_background(self):
        img = np.full((8, 8), 128, dtype=np.uint8)
        with pytest.warns(UserWarning):
            mask = build_tissue_mask(img, otsu_threshold(histogram_256(img)))
        assert not mask.any()

    def test_refill_is_idempotent(self):
        rng = np.random.default_rng(34)
        img = np.where(rng.uniform(size=(24, 24)) < 0.4, 90, 230).astype(np.uint8)
        mask = build_tissue_mask(img, 150)
        refill = build_tissue_mask(np.where(mask, 0, 255).astype(np.uint8), 0)
        np.testing.assert_array_equal(refill, mask)


class TestExtractPatches:
    def test_full_tissue_square(self):
        img = np.full((32, 32), 50, dtype=np.uint8)
        grid = extract_patches(img, np.ones((32, 32), bool), 16)
        assert len(grid) == 4
        assert all(p.tissue_fraction == 1.0 for p in grid.patches)

    def test_full_background(self):
        img = np.full((32, 32), 250, dtype=np.uint8)
        assert len(extract_patches(img, np.zeros((32, 32), bool), 16)) == 0

    def test_kept_set_matches_popcount_oracle(self):
        rng = np.random.default_rng(35)
        img = rng.integers(0, 256, size=(48, 48)).astype(np.uint8)
        mask = rng.uniform(size=(48, 48)) < 0.5
        grid = extract_patches(img, mask, 16, min_tissue_fraction=0.5)
        kept = {(p.grid_row, p.grid_col) for p in grid.patches}
        want = set()
        for r in range(3):
            for c in range(3):
                tile = mask[r * 16 : (r + 1) * 16, c * 16 : (c + 1) * 16]
                if tile.sum() / 256.0 >= 0.5:
                    want.add((r, c))
        assert kept == want

    def test_partial_border_tiles_dropped(self):
        img = np.zeros((40, 25), dtype=np.uint8)
        grid = extract_patches(img, np.ones((40, 25), bool), 16, 0.0)
        # 40//16 x 25//16 = 2 x 1
        assert len(grid) == 2
        assert grid.coordinates.tolist() == [[0, 0], [1, 0]]

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(36)
        img = rng.integers(0, 256, size=(64, 64)).astype(np.uint8)
        mask = rng.uniform(size=(64, 64)) < 0.6
        counts = [len(extract_patches(img, mask, 16, f))
                  for f in (0.0, 0.25, 0.5, 0.75, 1.0)]
        assert counts == sorted(counts, reverse=True)

    def test_row_major_order_and_payload(self):
        img = np.arange(32 * 32, dtype=np.uint64).reshape(32, 32).astype(np.uint8)
        grid = extract_patches(img, np.ones((32, 32), bool), 16, 0.0)
        coords = grid.coordinates
        assert coords.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]
        np.testing.assert_array_equal(grid.patches[1].pixels, img[0:16, 16:32])

    def test_oversize_patch_warns_empty(self):
        img = np.zeros((8, 8), dtype=np.uint8)
        with pytest.warns(UserWarning):
            grid = extract_patches(img, np.ones((8, 8), bool), 16)
        assert len(grid) == 0

    def test_rerun_bit_identical(self):
        rng = np.random.default_rng(37)
        img = rng.integers(0, 256, size=(48, 48)).astype(np.uint8)
        hist = histogram_256(img)
        m1 = build_tissue_mask(img, otsu_threshold(hist))
        m2 = build_tissue_mask(img, otsu_threshold(hist))
        np.testing.assert_array_equal(m1, m2)
        g1 = extract_patches(img, m1, 16)
        g2 = extract_patches(img, m2, 16)
        assert len(g1) == len(g2)
        for p1, p2 in zip(g1.patches, g2.patches):
            np.testing.assert_array_equal(p1.pixels, p2.pixels)


class TestPgm:
    def test_roundtrip_bytes(self, tmp_path):
        rng = np.random.default_rng(38)
        img = rng.integers(0, 256, size=(17, 23)).astype(np.uint8)
        path = tmp_path / "x.pgm"
        write_pgm(path, img)
        np.testing.assert_array_equal(read_pgm(path), img)
        # canonical header is byte-stable
        write_pgm(tmp_path / "y.pgm", img)
        assert (tmp_path / "x.pgm").read_bytes() == (tmp_path / "y.pgm").read_bytes()

    def test_rejects_bad_magic(self, tmp_path):
        p = tmp_path / "bad.pgm"
        p.write_bytes(b"P6\n2 2\n255\n1234")
        from pathohr.errors import FormatError
        with pytest.raises(FormatError):
            read_pgm(p)

    def test_rejects_truncated_payload(self, tmp_path):
        p = tmp_path / "short.pgm"
        p.write_bytes(b"P5\n4 4\n255\nabc")
        from pathohr.errors import FormatError
        with pytest.raises(FormatError):
            read_pgm(p)

    def test_comment_headers_accepted(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([1, 2, 3, 4]))
        np.testing.assert_array_equal(read_pgm(p), [[1, 2], [3, 4]])
