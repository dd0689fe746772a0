import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from dimae.errors import ValidationError
from dimae.patching import (
    MaskPlan,
    patchify,
    patchify_batch,
    sample_mask,
    unpatchify,
    unpatchify_batch,
)


class TestPatchify:
    def test_patch_count_and_dim(self):
        seq = patchify(np.zeros((3, 32, 32)), 16)
        assert seq.patches.shape == (4, 3 * 256)
        assert seq.grid == (2, 2)

    def test_roundtrip_exact(self, rng):
        img = rng.random((3, 32, 32))
        assert np.array_equal(unpatchify(patchify(img, 4)), img)

    def test_first_patch_is_topleft_block_row_major(self):
        img = np.arange(16, dtype=float).reshape(1, 4, 4)
        seq = patchify(img, 2)
        assert np.array_equal(seq.patches[0], [0, 1, 4, 5])

    def test_indivisible_rejected(self):
        with pytest.raises(ValidationError):
            patchify(np.zeros((3, 30, 32)), 4)

    def test_partial_unpatchify_uses_sentinel(self, rng):
        img = rng.random((1, 8, 8))
        seq = patchify(img, 4)
        partial = type(seq)(seq.patches[3:4], 4, seq.grid, 1)
        out = unpatchify(partial, idx=np.array([3]), fill=-1.0)
        assert np.array_equal(out[:, 4:, 4:], img[:, 4:, 4:])
        assert (out[:, :4, :] == -1.0).all()

    def test_count_mismatch_rejected(self, rng):
        seq = patchify(rng.random((1, 8, 8)), 4)
        with pytest.raises(ValidationError):
            unpatchify(seq, idx=np.array([0, 1]))


class TestBatchedVariants:
    def test_matches_single_image_path(self, rng):
        imgs = rng.random((3, 3, 16, 16)).astype(np.float32)
        batched = patchify_batch(torch.from_numpy(imgs), 4).numpy()
        for i in range(3):
            assert np.array_equal(batched[i], patchify(imgs[i], 4).patches)

    def test_batch_roundtrip(self, rng):
        imgs = torch.from_numpy(rng.random((2, 3, 16, 16)))
        back = unpatchify_batch(patchify_batch(imgs, 4), 4, 3, (4, 4))
        assert torch.equal(back, imgs)


class TestSampleMask:
    def test_fixed_visible_count(self):
        plan = sample_mask(196, 0.25, seed=0)
        assert plan.num_visible == 49
        assert len(plan.masked_idx) == 147

    def test_same_seed_identical(self):
        a, b = sample_mask(64, 0.25, seed=42), sample_mask(64, 0.25, seed=42)
        assert np.array_equal(a.visible_idx, b.visible_idx)
        assert np.array_equal(a.masked_idx, b.masked_idx)

    @given(st.integers(4, 200), st.floats(0.05, 0.95), st.integers(0, 2**32))
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, n, p, seed):
        n_vis = int(round(p * n))
        if n_vis < 1 or n_vis >= n:
            return
        plan = sample_mask(n, p, seed)
        union = np.sort(np.concatenate([plan.visible_idx, plan.masked_idx]))
        assert np.array_equal(union, np.arange(n))
        assert plan.num_visible == n_vis

    def test_each_index_uniform_over_seeds(self):
        hits = np.zeros(16)
        trials = 10_000
        for seed in range(trials):
            hits[sample_mask(16, 0.25, seed).visible_idx] += 1
        freq = hits / trials
        assert np.abs(freq - 0.25).max() < 0.02

    def test_degenerate_fractions_rejected(self):
        with pytest.raises(ValidationError):
            sample_mask(16, 0.001, seed=0)
        with pytest.raises(ValidationError):
            sample_mask(16, 0.999, seed=0)
        with pytest.raises(ValidationError):
            sample_mask(16, 1.5, seed=0)

    def test_invalid_partition_rejected(self):
        with pytest.raises(ValidationError):
            MaskPlan(4, np.array([0, 1]), np.array([1, 2, 3]), seed=0)
