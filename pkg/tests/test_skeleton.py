"""Thinning, branch breaking, backbone filtering, and uniform bones."""
import numpy as np
import pytest
from scipy import ndimage

from crystalscan.imaging import BinaryMask
from crystalscan.params import default_parameters
from crystalscan.skeleton import (Skeleton, break_branches, break_uniform,
                                  filter_short_backbones, neighbor_counts,
                                  skeletonize)


def random_blobs(rng, shape=(64, 64), n_seeds=25, grow=3):
    """Random connected blob mask for property checks."""
    bits = np.zeros(shape, bool)
    seeds = rng.integers(0, shape[0], size=(n_seeds, 2))
    bits[seeds[:, 0], seeds[:, 1]] = True
    bits = ndimage.binary_dilation(bits, iterations=grow)
    return BinaryMask(bits=bits)


def chain_is_8_connected(pixels: np.ndarray) -> bool:
    steps = np.abs(np.diff(pixels, axis=0))
    return bool(np.all(steps.max(axis=1) == 1))


class TestSkeletonize:
    def test_one_pixel_line_is_unchanged(self):
        bits = np.zeros((10, 30), bool)
        bits[5, 2:28] = True
        sk = skeletonize(BinaryMask(bits=bits))
        assert np.array_equal(sk.bits, bits)

    def test_filled_bar_reduces_to_centerline(self):
        bits = np.zeros((20, 110), bool)
        bits[8:13, 5:105] = True
        sk = skeletonize(BinaryMask(bits=bits))
        # 1 px thick everywhere, essentially all on the medial row 10
        assert np.all(sk.bits.sum(axis=0) <= 1)
        coords = np.argwhere(sk.bits)
        medial_fraction = np.mean(coords[:, 0] == 10)
        assert medial_fraction > 0.9
        assert 90 <= sk.bits.sum() <= 100

    def test_empty_mask_gives_empty_skeleton(self):
        sk = skeletonize(BinaryMask(bits=np.zeros((8, 8), bool)))
        assert not sk.bits.any()

    def test_skeleton_is_subset_of_mask(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            mask = random_blobs(rng)
            sk = skeletonize(mask)
            assert not (sk.bits & ~mask.bits).any()

    def test_idempotent_on_random_blobs(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            sk = skeletonize(random_blobs(rng))
            again = skeletonize(Skeleton(bits=sk.bits))
            assert np.array_equal(again.bits, sk.bits)

    def test_preserves_component_count(self):
        rng = np.random.default_rng(3)
        eight = np.ones((3, 3))
        for _ in range(10):
            mask = random_blobs(rng)
            _, n_before = ndimage.label(mask.bits, structure=eight)
            sk = skeletonize(mask)
            _, n_after = ndimage.label(sk.bits, structure=eight)
            assert n_after == n_before


class TestBreakBranches:
    def test_plus_sign_splits_into_four_arms(self):
        bits = np.zeros((11, 11), bool)
        bits[5, :] = True
        bits[:, 5] = True
        # independent neighbor-count enumeration: junctions are the center
        # plus the four arm pixels touching it diagonally across arms
        junctions = set()
        for r, c in np.argwhere(bits):
            n = sum(bool(bits[r + dr, c + dc])
                    for dr in (-1, 0, 1) for dc in (-1, 0, 1)
                    if (dr, dc) != (0, 0)
                    and 0 <= r + dr < 11 and 0 <= c + dc < 11)
            if n >= 3:
                junctions.add((r, c))
        assert (5, 5) in junctions and len(junctions) == 5
        arms = break_branches(Skeleton(bits=bits))
        assert len(arms) == 4
        all_pixels = {tuple(p) for arm in arms for p in arm.pixels}
        assert all_pixels.isdisjoint(junctions)
        assert len(all_pixels) == bits.sum() - len(junctions)
        assert sorted(arm.length_px for arm in arms) == [4, 4, 4, 4]

    def test_open_curve_is_one_ordered_backbone(self):
        bits = np.zeros((12, 12), bool)
        path = [(2, 2), (3, 3), (4, 4), (5, 5), (5, 6), (5, 7), (6, 8)]
        for r, c in path:
            bits[r, c] = True
        arms = break_branches(Skeleton(bits=bits))
        assert len(arms) == 1
        chain = [tuple(p) for p in arms[0].pixels]
        assert chain[0] == (2, 2) and chain[-1] == (6, 8)
        assert chain == path
        assert chain_is_8_connected(arms[0].pixels)

    def test_isolated_pixel_is_length_one_backbone(self):
        bits = np.zeros((5, 5), bool)
        bits[2, 3] = True
        arms = break_branches(Skeleton(bits=bits))
        assert len(arms) == 1
        assert arms[0].length_px == 1

    def test_closed_loop_cut_at_smallest_pixel(self):
        # diamond ring: every pixel has exactly two 8-neighbors
        bits = np.zeros((9, 9), bool)
        for r in range(9):
            for c in range(9):
                if abs(r - 4) + abs(c - 4) == 3:
                    bits[r, c] = True
        arms = break_branches(Skeleton(bits=bits))
        assert len(arms) == 1
        chain = [tuple(p) for p in arms[0].pixels]
        assert chain[0] == (1, 4)  # lexicographically smallest loop pixel
        assert len(chain) == bits.sum()
        assert chain_is_8_connected(arms[0].pixels)

    def test_union_equals_skeleton_minus_junctions(self):
        rng = np.random.default_rng(4)
        for _ in range(15):
            sk = skeletonize(random_blobs(rng))
            counts = neighbor_counts(sk.bits)
            junctions = sk.bits & (counts >= 3)
            arms = break_branches(sk)
            got = {tuple(p) for arm in arms for p in arm.pixels}
            expected = {tuple(p) for p in np.argwhere(sk.bits & ~junctions)}
            assert got == expected

    def test_max_degree_two_after_breaking(self):
        rng = np.random.default_rng(5)
        for _ in range(15):
            sk = skeletonize(random_blobs(rng))
            arms = break_branches(sk)
            remaining = np.zeros_like(sk.bits)
            for arm in arms:
                remaining[arm.pixels[:, 0], arm.pixels[:, 1]] = True
            counts = neighbor_counts(remaining)
            assert counts[remaining].max(initial=0) <= 2

    def test_ordering_is_deterministic(self):
        rng = np.random.default_rng(6)
        sk = skeletonize(random_blobs(rng))
        a = break_branches(sk)
        b = break_branches(sk)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert np.array_equal(x.pixels, y.pixels)
        mins = [tuple(arm.pixels.min(axis=0)) for arm in a]
        assert mins == sorted(mins)


class TestFilterShortBackbones:
    def test_tuned_threshold_is_110_px(self):
        p = default_parameters(1.9, 78.5)
        assert p.backbone_min_px == pytest.approx(110.371)
        sk = np.zeros((200, 200), bool)
        sk[10, 10:120] = True    # 110 px: dropped (110 < 110.371)
        sk[50, 10:121] = True    # 111 px: kept
        arms = break_branches(Skeleton(bits=sk))
        kept = filter_short_backbones(arms, p)
        assert [a.length_px for a in kept] == [111]

    def test_zero_threshold_is_identity(self):
        p = default_parameters(1.9, 78.5).replace(pixThresh_propCons=0.0)
        sk = np.zeros((10, 10), bool)
        sk[3, 3] = True
        arms = break_branches(Skeleton(bits=sk))
        assert filter_short_backbones(arms, p) == arms

    def test_all_short_gives_empty_list(self):
        p = default_parameters(1.9, 78.5)
        sk = np.zeros((10, 40), bool)
        sk[4, 5:25] = True
        arms = break_branches(Skeleton(bits=sk))
        assert filter_short_backbones(arms, p) == []


class TestBreakUniform:
    @staticmethod
    def params_with_length(length_px):
        # pick propCons so bone_length_px == length_px at dspace_px == 100
        return default_parameters(dspace_nm=100.0, pix_2_nm=1.0).replace(
            ellipse_len_propCons=length_px / 100.0)

    @staticmethod
    def straight_backbone(n):
        bits = np.zeros((3, n + 2), bool)
        bits[1, 1:n + 1] = True
        return break_branches(Skeleton(bits=bits))

    def test_exact_division(self):
        bones = break_uniform(self.straight_backbone(10), self.params_with_length(5))
        assert [len(b.pixels) for b in bones] == [5, 5]

    def test_small_remainder_merges_into_previous(self):
        bones = break_uniform(self.straight_backbone(12), self.params_with_length(5))
        assert [len(b.pixels) for b in bones] == [5, 7]

    def test_large_remainder_kept_as_own_bone(self):
        bones = break_uniform(self.straight_backbone(13), self.params_with_length(5))
        assert [len(b.pixels) for b in bones] == [5, 5, 3]

    def test_tuned_bone_length_is_601(self):
        p = default_parameters(1.9, 78.5)
        assert p.bone_length_px == 601  # round(4.03 * 149.15)

    def test_rejects_degenerate_length(self):
        with pytest.raises(ValueError):
            break_uniform(self.straight_backbone(10), self.params_with_length(1))

    def test_pixel_conservation_and_source_ids(self):
        rng = np.random.default_rng(7)
        p = self.params_with_length(7)
        sk = skeletonize(random_blobs(rng))
        arms = break_branches(sk)
        bones = break_uniform(arms, p)
        bone_pixels = [tuple(px) for b in bones for px in b.pixels]
        arm_pixels = [tuple(px) for a in arms for px in a.pixels]
        assert sorted(bone_pixels) == sorted(arm_pixels)
        assert len(bone_pixels) == len(set(bone_pixels))
        assert {b.source_backbone for b in bones} <= set(range(len(arms)))

    def test_bones_are_contiguous_chains(self):
        p = self.params_with_length(4)
        bones = break_uniform(self.straight_backbone(11), p)
        for bone in bones:
            assert chain_is_8_connected(bone.pixels)
