import numpy as np
import pytest
import torch

from dimae.errors import ValidationError
from dimae.fourier_aug import StyleMixConfig
from dimae.model import DecoderConfig, EncoderConfig, build_model
from dimae.objective import (
    ReconTarget,
    augment_batch,
    batch_loss,
    make_target,
    masked_mse,
)
from dimae.patching import sample_mask

from reference import masked_mse_loops

ENC = EncoderConfig(depth=1, width=16, heads=2, patch_size=2, image_size=8, feature_dim=8)
DEC = DecoderConfig(depth=1, width=16, heads=2)


def small_model(n_domains=3, seed=0):
    return build_model(ENC, DEC, n_domains, seed=seed)


def make_batch(rng, b=2, n=16, patch_dim=12, p_visible=0.25):
    pred = torch.from_numpy(rng.random((b, n, patch_dim)).astype(np.float32))
    plans = [sample_mask(n, p_visible, seed=100 + i) for i in range(b)]
    targets = torch.from_numpy(
        rng.random((b, len(plans[0].masked_idx), patch_dim)).astype(np.float32)
    )
    return pred, ReconTarget(targets, plans, np.zeros(b, dtype=np.int64))


class TestMaskedMse:
    def test_zero_when_masked_positions_match(self, rng):
        pred, target = make_batch(rng)
        for b, plan in enumerate(target.plans):
            pred[b, plan.masked_idx] = target.target_patches[b]
        assert masked_mse(pred, target).item() == 0.0

    def test_constant_offset_gives_one(self, rng):
        pred, target = make_batch(rng)
        for b, plan in enumerate(target.plans):
            pred[b, plan.masked_idx] = target.target_patches[b] + 1.0
        assert abs(masked_mse(pred, target).item() - 1.0) < 1e-6

    def test_matches_triple_loop_oracle(self, rng):
        for trial in range(20):
            pred, target = make_batch(rng)
            got = masked_mse(pred, target).item()
            want = masked_mse_loops(
                pred.numpy(), target.target_patches.numpy(), target.plans
            )
            assert abs(got - want) < 1e-6

    def test_visible_positions_do_not_contribute(self, rng):
        pred, target = make_batch(rng)
        base = masked_mse(pred, target).item()
        for b, plan in enumerate(target.plans):
            pred[b, plan.visible_idx] += 123.0
        assert masked_mse(pred, target).item() == base

    def test_plan_mismatch_rejected(self, rng):
        pred, target = make_batch(rng)
        bad = ReconTarget(
            target.target_patches[:, :-1], target.plans, target.domains
        )
        with pytest.raises(ValidationError):
            masked_mse(pred, bad)


class TestMakeTarget:
    def test_targets_come_from_original_image(self, rng):
        images = torch.from_numpy(rng.random((2, 3, 8, 8)).astype(np.float32))
        plans = [sample_mask(16, 0.25, seed=i) for i in range(2)]
        target = make_target(images, plans, patch_size=2)
        # perturbing pixels in visible patches leaves the target bitwise intact
        perturbed = images.clone()
        from dimae.patching import patchify_batch, unpatchify_batch

        patches = patchify_batch(perturbed, 2)
        for b, plan in enumerate(plans):
            patches[b, plan.visible_idx] += 7.0
        perturbed = unpatchify_batch(patches, 2, 3, (4, 4))
        target2 = make_target(perturbed, plans, patch_size=2)
        assert torch.equal(target.target_patches, target2.target_patches)


class TestAugmentBatch:
    def _pools(self, rng):
        return {d: rng.random((4, 3, 8, 8)).astype(np.float32) for d in range(3)}

    def test_deterministic(self, rng):
        pools = self._pools(rng)
        imgs = rng.random((3, 3, 8, 8)).astype(np.float32)
        doms = np.array([0, 1, 2])
        a = augment_batch(imgs, doms, pools, StyleMixConfig(), seed=5)
        b = augment_batch(imgs, doms, pools, StyleMixConfig(), seed=5)
        assert np.array_equal(a, b)

    def test_source_label_enters_only_through_exclusion(self, rng):
        # relabeling the unused domains while keeping the same aux images
        # fixed leaves the output unchanged: the source label matters only
        # by excluding its own pool
        from dimae.fourier_aug import cp_style_mix

        x = rng.random((3, 8, 8)).astype(np.float32)
        a1, a2 = (rng.random((3, 8, 8)).astype(np.float32) for _ in range(2))
        # labels (1, 2) vs swapped labels (2, 1) with identical images
        out_a = cp_style_mix(x, [a1, a2], StyleMixConfig(), np.random.default_rng(4))
        out_b = cp_style_mix(x, [a1, a2], StyleMixConfig(), np.random.default_rng(4))
        assert np.array_equal(out_a, out_b)

    def test_source_pool_never_sampled(self, rng):
        # with only the source pool present, augmentation must fail
        imgs = rng.random((1, 3, 8, 8)).astype(np.float32)
        with pytest.raises(ValidationError):
            augment_batch(
                imgs, np.array([0]), {0: imgs}, StyleMixConfig(), seed=1
            )


class TestBatchLoss:
    def _setup(self, rng, n_domains=3):
        images = rng.random((6, 3, 8, 8)).astype(np.float32)
        domains = np.array([0, 0, 1, 1, 2, 2])[: 2 * n_domains // 1][:6]
        pools = {d: images[domains == d] for d in range(n_domains)}
        return images, domains, pools

    def test_single_domain_batch_touches_one_decoder(self, rng):
        model = small_model()
        images = rng.random((4, 3, 8, 8)).astype(np.float32)
        pools = {0: images, 1: images, 2: images}
        loss = batch_loss(
            model, images, np.full(4, 2), pools, StyleMixConfig(), 0.25, seed=3
        )
        loss.backward()
        for p in model.bank.decoders[2].parameters():
            assert p.grad is not None
        for i in (0, 1):
            for p in model.bank.decoders[i].parameters():
                assert p.grad is None or p.grad.abs().max() == 0.0

    def test_invariant_to_sample_reordering(self, rng):
        model = small_model()
        images, domains, pools = self._setup(rng)
        ids = np.arange(6)
        base = batch_loss(
            model, images, domains, pools, StyleMixConfig(), 0.25, seed=3,
            sample_ids=ids,
        ).item()
        perm = np.array([4, 2, 0, 5, 1, 3])
        permuted = batch_loss(
            model, images[perm], domains[perm], pools, StyleMixConfig(), 0.25,
            seed=3, sample_ids=ids[perm],
        ).item()
        assert abs(base - permuted) < 1e-6

    def test_no_aug_full_visibility_reduces_to_plain_mse(self, rng):
        # mode none + nearly-full visibility: loss equals the oracle MSE of
        # the model's predictions against the original pixels
        model = small_model()
        images, domains, pools = self._setup(rng)
        loss = batch_loss(
            model, images, domains, pools, StyleMixConfig(mode="none"),
            p_visible=15 / 16, seed=11,
        ).item()
        # recompute by hand through the model's own forward pieces
        from dimae.patching import patchify_batch, sample_mask
        from dimae.seeds import substream_seed

        plans = [
            sample_mask(16, 15 / 16, substream_seed(11, f"mask/{i}"))
            for i in range(6)
        ]
        x = torch.from_numpy(images)
        patches = patchify_batch(x, 2)
        vis = torch.from_numpy(np.stack([p.visible_idx for p in plans]))
        vp = patches.gather(1, vis.unsqueeze(-1).expand(6, 15, 12))
        z = model.encode(vp, vis)
        preds = torch.empty(6, 16, 12)
        for d in range(3):
            sel = np.flatnonzero(domains == d)
            preds[sel] = model.decode(z[sel], vis[sel], d)
        want = masked_mse_loops(
            preds.detach().numpy(),
            np.stack([patches[b, plans[b].masked_idx].numpy() for b in range(6)]),
            plans,
        )
        assert abs(loss - want) < 1e-6

    def test_target_is_preaugmentation_image(self, rng):
        # regression guard: replacing targets with the augmented view changes
        # the loss
        model = small_model()
        images, domains, pools = self._setup(rng)
        loss = batch_loss(
            model, images, domains, pools, StyleMixConfig(), 0.25, seed=3
        ).item()
        views = augment_batch(images, domains, pools, StyleMixConfig(), seed=3)
        loss_aug_target = batch_loss(
            model, views, domains, pools, StyleMixConfig(mode="none"), 0.25, seed=3
        ).item()
        assert loss != loss_aug_target

    def test_content_mix_target_is_the_mixed_image(self, rng):
        # mixup/cutmix alter content, so their regression target is the mixed
        # image itself: running mode "none" on the pre-mixed views with the
        # same seed must give the identical loss
        model = small_model()
        images, domains, pools = self._setup(rng)
        for mode in ("mixup", "cutmix"):
            cfg = StyleMixConfig(mode=mode)
            loss = batch_loss(
                model, images, domains, pools, cfg, 0.25, seed=7
            ).item()
            views = augment_batch(images, domains, pools, cfg, seed=7)
            loss_on_views = batch_loss(
                model, views, domains, pools, StyleMixConfig(mode="none"),
                0.25, seed=7,
            ).item()
            assert loss == loss_on_views

    def test_missing_domain_tag_rejected(self, rng):
        model = small_model()
        images, domains, pools = self._setup(rng)
        with pytest.raises(ValidationError):
            batch_loss(
                model, images, domains[:-1], pools, StyleMixConfig(), 0.25, seed=0
            )

    def test_single_decoder_routes_everything_to_decoder_zero(self, rng):
        model = small_model(n_domains=1)
        images, domains, pools = self._setup(rng)
        loss = batch_loss(
            model, images, domains, pools, StyleMixConfig(), 0.25, seed=3
        )
        loss.backward()
        for p in model.bank.decoders[0].parameters():
            assert p.grad is not None and p.grad.abs().max() > 0.0
