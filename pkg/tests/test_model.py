import numpy as np
import pytest
import torch

from dimae.errors import ValidationError
from dimae.fourier_aug import StyleMixConfig
from dimae.model import (
    DecoderConfig,
    EncoderConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from dimae.objective import batch_loss
from dimae.patching import sample_mask

from reference import encoder_forward_loops

TINY_ENC = EncoderConfig(depth=2, width=32, heads=2, patch_size=4, image_size=16, feature_dim=24)
TINY_DEC = DecoderConfig(depth=1, width=16, heads=2)


def tiny_model(n_domains=3, seed=0, dtype=torch.float32):
    return build_model(TINY_ENC, TINY_DEC, n_domains, seed=seed, dtype=dtype)


def random_batch(model, b, rng, p_visible=0.5):
    n = model.enc_cfg.num_patches
    patches = torch.from_numpy(
        rng.random((b, n, model.enc_cfg.patch_dim)).astype(np.float32)
    )
    plans = [sample_mask(n, p_visible, seed=i) for i in range(b)]
    vis = torch.from_numpy(np.stack([p.visible_idx for p in plans]))
    nv = vis.shape[1]
    vis_patches = patches.gather(1, vis.unsqueeze(-1).expand(b, nv, patches.shape[-1]))
    return patches, plans, vis, vis_patches


class TestEncoder:
    def test_output_shape(self, rng):
        model = tiny_model()
        _, _, vis, vis_patches = random_batch(model, 2, rng)
        z = model.encode(vis_patches, vis)
        assert z.shape == (2, vis.shape[1], 32)

    def test_permutation_equivariance(self, rng):
        model = tiny_model()
        _, _, vis, vis_patches = random_batch(model, 1, rng)
        z = model.encode(vis_patches, vis)
        perm = torch.randperm(vis.shape[1])
        z_perm = model.encode(vis_patches[:, perm], vis[:, perm])
        assert torch.allclose(z[:, perm], z_perm, atol=1e-5)

    def test_matches_loop_level_reference(self, rng):
        cfg = EncoderConfig(depth=2, width=8, heads=2, patch_size=4, image_size=16, feature_dim=8)
        model = build_model(cfg, TINY_DEC, 1, seed=3, dtype=torch.float64)
        _, _, vis, vis_patches = random_batch(model, 1, rng)
        z = model.encode(vis_patches.double(), vis).detach().numpy()[0]
        state = {k: v.detach().numpy() for k, v in model.encoder.state_dict().items()}
        ref = encoder_forward_loops(
            state, cfg, vis_patches[0].double().numpy(), vis[0].numpy(),
            state["pos_embed"][0],
        )
        assert np.abs(z - ref).max() < 1e-5

    def test_wrong_patch_dim_rejected(self):
        model = tiny_model()
        with pytest.raises(ValidationError):
            model.encode(torch.zeros(1, 4, 7), torch.zeros(1, 4, dtype=torch.long))


class TestDecoderBank:
    def test_predicts_all_patches(self, rng):
        model = tiny_model()
        _, _, vis, vis_patches = random_batch(model, 2, rng)
        z = model.encode(vis_patches, vis)
        pred = model.decode(z, vis, domain=1)
        assert pred.shape == (2, model.enc_cfg.num_patches, model.enc_cfg.patch_dim)

    def test_identical_weights_identical_outputs(self, rng):
        model = tiny_model()
        model.bank.decoders[1].load_state_dict(model.bank.decoders[0].state_dict())
        _, _, vis, vis_patches = random_batch(model, 2, rng)
        z = model.encode(vis_patches, vis)
        assert torch.equal(model.decode(z, vis, 0), model.decode(z, vis, 1))

    def test_unused_decoders_get_no_gradient(self, rng):
        model = tiny_model()
        _, _, vis, vis_patches = random_batch(model, 2, rng)
        z = model.encode(vis_patches, vis)
        model.decode(z, vis, domain=0).sum().backward()
        for p in model.bank.decoders[0].parameters():
            assert p.grad is not None
        for i in (1, 2):
            for p in model.bank.decoders[i].parameters():
                assert p.grad is None or p.grad.abs().max() == 0.0

    def test_unknown_domain_rejected(self, rng):
        model = tiny_model()
        _, _, vis, vis_patches = random_batch(model, 1, rng)
        z = model.encode(vis_patches, vis)
        with pytest.raises(ValidationError):
            model.decode(z, vis, domain=5)

    def test_parameter_disjointness(self, rng):
        model = tiny_model()
        before_enc = [p.detach().clone() for p in model.encoder.parameters()]
        before_d2 = [p.detach().clone() for p in model.bank.decoders[2].parameters()]
        with torch.no_grad():
            for p in model.bank.decoders[1].parameters():
                p.add_(1.0)
        assert all(
            torch.equal(a, b)
            for a, b in zip(before_enc, model.encoder.parameters())
        )
        assert all(
            torch.equal(a, b)
            for a, b in zip(before_d2, model.bank.decoders[2].parameters())
        )


class TestFeatures:
    def test_feature_dim_default_1024(self, rng):
        model = build_model(EncoderConfig(depth=1, width=64, heads=2), DecoderConfig(depth=1, width=32, heads=2), 2, seed=0)
        x = torch.from_numpy(rng.random((2, 3, 32, 32)).astype(np.float32))
        assert model.forward_features(x).shape == (2, 1024)

    def test_matches_encode_on_full_plan(self, rng):
        model = tiny_model()
        images = torch.from_numpy(rng.random((2, 3, 16, 16)).astype(np.float32))
        feats = model.forward_features(images)
        from dimae.patching import patchify_batch

        patches = patchify_batch(images, model.enc_cfg.patch_size)
        n = patches.shape[1]
        idx = torch.arange(n).expand(2, n)
        tokens = model.encode(patches, idx)
        pooled = torch.cat([tokens.mean(dim=1), tokens.std(dim=1)], dim=-1)
        manual = model.encoder.feature_proj(pooled)
        assert torch.allclose(feats, manual, atol=1e-5)

    def test_shuffled_patches_with_positions_keeps_features(self, rng):
        # mean pooling ignores token order when positions move with patches
        model = tiny_model()
        images = torch.from_numpy(rng.random((1, 3, 16, 16)).astype(np.float32))
        from dimae.patching import patchify_batch

        patches = patchify_batch(images, 4)
        n = patches.shape[1]
        perm = torch.randperm(n)
        idx = torch.arange(n).expand(1, n)
        tok = model.encode(patches, idx)
        tok_perm = model.encode(patches[:, perm], idx[:, perm])
        assert torch.allclose(tok.mean(dim=1), tok_perm.mean(dim=1), atol=1e-5)
        # shuffling patches while keeping positions changes the features
        tok_broken = model.encode(patches[:, perm], idx)
        assert not torch.allclose(tok.mean(dim=1), tok_broken.mean(dim=1), atol=1e-3)


def _loss_fn(model, images, domains, pools):
    return batch_loss(
        model, images, domains, pools, StyleMixConfig(), p_visible=0.5, seed=77
    )


class TestGradients:
    def test_routing_single_domain_batch(self, rng):
        # batch entirely from domain 1: other decoders get exactly zero grad
        images = rng.random((4, 3, 16, 16)).astype(np.float32)
        pools = {0: images[:2], 1: images[1:3], 2: images[2:]}
        domains = np.full(4, 1)
        for seed in range(10):
            model = tiny_model(seed=seed)
            loss = _loss_fn(model, images, domains, pools)
            loss.backward()
            enc_norm = sum(
                p.grad.abs().sum().item() for p in model.encoder.parameters()
                if p.grad is not None
            )
            assert enc_norm > 0.0
            for i in (0, 2):
                for p in model.bank.decoders[i].parameters():
                    assert p.grad is None or p.grad.abs().max().item() == 0.0

    def test_finite_difference_agreement(self, rng):
        torch.manual_seed(0)
        enc = EncoderConfig(depth=2, width=16, heads=2, patch_size=4, image_size=16, feature_dim=8)
        model = build_model(enc, DecoderConfig(depth=1, width=16, heads=2), 2, seed=5, dtype=torch.float64)
        images = rng.random((4, 3, 16, 16)).astype(np.float64)
        pools = {0: images[:2], 1: images[2:]}
        domains = np.array([0, 0, 1, 1])

        loss = _loss_fn(model, images, domains, pools)
        loss.backward()
        params = list(model.named_parameters())
        flat = [(n, p, i) for n, p in params for i in range(p.numel())]
        picks = rng.choice(len(flat), size=64, replace=False)
        h = 1e-4
        for k in picks:
            name, p, i = flat[k]
            with torch.no_grad():
                orig = p.view(-1)[i].item()
                p.view(-1)[i] = orig + h
                hi = _loss_fn(model, images, domains, pools).item()
                p.view(-1)[i] = orig - h
                lo = _loss_fn(model, images, domains, pools).item()
                p.view(-1)[i] = orig
            fd = (hi - lo) / (2 * h)
            grad = p.grad.view(-1)[i].item()
            denom = max(abs(fd), abs(grad), 1e-8)
            assert abs(fd - grad) / denom < 1e-3, (name, i, fd, grad)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, rng, tmp_path):
        model = tiny_model(seed=9)
        path = tmp_path / "ck.npz"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        x = torch.from_numpy(rng.random((3, 3, 16, 16)).astype(np.float32))
        assert torch.equal(model.forward_features(x), loaded.forward_features(x))

    def test_wire_format_names(self, tmp_path):
        model = tiny_model(seed=1)
        path = tmp_path / "ck.npz"
        save_checkpoint(model, path)
        import json

        with np.load(path) as archive:
            keys = set(archive.files)
            cfg = json.loads(bytes(archive["__config__"]).decode())
        assert cfg["format_version"] == 1
        assert any(k.startswith("encoder.") for k in keys)
        for i in range(3):
            assert f"mask_token.{i}" in keys
            assert any(k.startswith(f"decoder.{i}.") for k in keys)

    def test_future_format_rejected(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "ck.npz"
        save_checkpoint(model, path)
        with np.load(path) as archive:
            arrays = {k: archive[k] for k in archive.files}
        import json

        cfg = json.loads(bytes(arrays["__config__"]).decode())
        cfg["format_version"] = 99
        arrays["__config__"] = np.frombuffer(json.dumps(cfg).encode(), dtype=np.uint8)
        bad = tmp_path / "bad.npz"
        with open(bad, "wb") as f:
            np.savez(f, **arrays)
        with pytest.raises(ValidationError):
            load_checkpoint(bad)
