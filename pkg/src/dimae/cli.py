"""Command-line entry point.

Subcommands: generate-data, augment, pretrain, probe, finetune, ablate,
reconstruct, export-features. Runs are configured by a JSON file with
sections {data, model, stylemix, train, eval}; every output directory gets
an immutable manifest. Exit codes: 0 success, 2 usage, 3 validation failure.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .data import (
    DomainRegistry,
    SyntheticSpec,
    generate_synthetic,
    load_folder,
    load_image,
)
from .errors import TrainingDiverged, ValidationError
from .evaluation import (
    ablation_runner,
    cross_domain_protocol,
    export_features,
    reconstruction_grid,
)
from .fourier_aug import StyleMixConfig, cp_style_mix
from .manifest import write_manifest
from .model import DecoderConfig, EncoderConfig, build_model, load_checkpoint
from .seeds import substream, substream_seed
from .train import TrainConfig, pretrain


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _encoder_config(cfg: dict) -> EncoderConfig:
    return EncoderConfig(**cfg.get("model", {}).get("encoder", {}))


def _decoder_config(cfg: dict) -> DecoderConfig:
    return DecoderConfig(**cfg.get("model", {}).get("decoder", {}))


def _stylemix_config(cfg: dict, mode=None) -> StyleMixConfig:
    section = dict(cfg.get("stylemix", {}))
    for key in ("lambda_law", "mu_law"):
        if key in section:
            section[key] = tuple(section[key])
    if mode is not None:
        section["mode"] = mode
    return StyleMixConfig(**section)


def _train_config(cfg: dict, seed=None) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    if seed is not None:
        section["seed"] = seed
    return TrainConfig(**section)


def _save_png(img: np.ndarray, path):
    from PIL import Image

    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0)).save(path)


def cmd_generate_data(args):
    spec = SyntheticSpec.from_json(args.spec) if args.spec else SyntheticSpec()
    if args.seed is not None:
        spec = SyntheticSpec(
            num_classes=spec.num_classes, image_size=spec.image_size,
            domains=spec.domains, seed=args.seed,
            samples_per_class_per_domain=spec.samples_per_class_per_domain,
        )
    write_manifest(
        args.out, "generate-data", {"spec": spec.__dict__ | {"domains": list(spec.domains)}},
        {"root": spec.seed}, [args.out],
    )
    generate_synthetic(spec, args.out)
    print(f"wrote {len(spec.domains)} domains under {args.out}")
    return 0


def cmd_augment(args):
    root = Path(args.input_dir)
    domains = args.domains.split(",")
    registry = DomainRegistry(tuple(domains))
    cfg = _stylemix_config(_load_config(args.config), mode=args.mode)
    files = {}
    for name in domains:
        paths = sorted((root / name).rglob("*.png"))
        if not paths:
            raise ValidationError(f"no images for domain {name!r}")
        files[name] = paths
    out = Path(args.out)
    write_manifest(
        out, "augment",
        {"mode": args.mode, "domains": domains, "input_dir": str(root)},
        {"root": args.seed}, [str(out)],
    )
    for name in domains:
        dom_out = out / name
        dom_out.mkdir(parents=True, exist_ok=True)
        for path in files[name]:
            rel = path.relative_to(root / name)
            rng = substream(args.seed, f"augment/{name}/{rel}")
            others = [d for d in domains if d != name]
            aux_paths = [
                files[d][int(rng.integers(len(files[d])))] for d in others
            ]
            record = {}
            result = cp_style_mix(
                load_image(path), [load_image(p) for p in aux_paths], cfg, rng,
                record=record,
            )
            target = dom_out / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            _save_png(result, target)
            sidecar = {
                "source": str(path),
                "aux": [str(p) for p in aux_paths],
                "seed": args.seed,
                **record,
            }
            with open(target.with_suffix(".json"), "w") as f:
                json.dump(sidecar, f, indent=2)
    print(f"augmented {sum(len(v) for v in files.values())} images -> {out}")
    return 0


def cmd_pretrain(args):
    cfg = _load_config(args.config)
    dataset = load_folder(args.data)
    if dataset.registry.n_domains < 2:
        raise ValidationError(
            "pretraining requires N_d >= 2 domains; "
            f"found {dataset.registry.n_domains} under {args.data}"
        )
    train_cfg = _train_config(cfg, seed=args.seed)
    enc_cfg = _encoder_config(cfg)
    dec_cfg = _decoder_config(cfg)
    model = build_model(enc_cfg, dec_cfg, dataset.registry.n_domains, seed=train_cfg.seed)
    write_manifest(
        args.out, "pretrain", cfg | {"data": str(args.data)},
        {"root": train_cfg.seed}, [str(Path(args.out) / "checkpoint_final.npz")],
    )
    metrics = pretrain(
        dataset, model, train_cfg, _stylemix_config(cfg), args.out,
        resume_from=args.resume,
    )
    print(f"final epoch loss {metrics[-1]['loss']:.6f} -> {args.out}")
    return 0


def _protocol(args, lo, hi, label):
    if not lo <= args.label_fraction < hi:
        raise ValidationError(
            f"{label} handles label fractions in [{lo}, {hi}); "
            f"got {args.label_fraction}"
        )
    data = load_folder(args.data)
    source = data.subset(
        np.isin(data.domains, [data.registry.index(n) for n in args.source_domains.split(",")])
    )
    target = data.subset(
        np.isin(data.domains, [data.registry.index(n) for n in args.target_domains.split(",")])
    )
    result = cross_domain_protocol(
        args.checkpoint, source, target, args.label_fraction, seed=args.seed
    )
    if args.out:
        write_manifest(
            args.out, label,
            {"checkpoint": str(args.checkpoint), "label_fraction": args.label_fraction},
            {"root": args.seed}, [str(Path(args.out) / "result.json")],
        )
        with open(Path(args.out) / "result.json", "w") as f:
            json.dump(result, f, indent=2)
    print(json.dumps(result, indent=2))
    return 0


def cmd_probe(args):
    return _protocol(args, 0.0 + 1e-12, 0.10, "probe")


def cmd_finetune(args):
    return _protocol(args, 0.10, 1.0 + 1e-12, "finetune")


def cmd_ablate(args):
    cfg = _load_config(args.config)
    data = load_folder(args.data)
    source_names = args.source_domains.split(",")
    source = data.subset(
        np.isin(data.domains, [data.registry.index(n) for n in source_names])
    )
    # reindex source domains densely for the decoder bank
    dense = DomainRegistry(tuple(source_names))
    source.domains = np.asarray(
        [dense.index(data.registry.names[d]) for d in source.domains]
    )
    source.registry = dense
    target = data.subset(data.domains == data.registry.index(args.target_domain))
    seeds = [int(s) for s in args.seeds.split(",")]
    depths = [int(d) for d in args.depths.split(",")]
    cells = []
    for mode in args.modes.split(","):
        for variant in args.decoders.split(","):
            for depth in depths:
                cells.append((mode, variant, depth))
    out = Path(args.out)
    write_manifest(
        out, "ablate", cfg | {"cells": [list(c) for c in cells]},
        {"seeds": seeds}, [str(out / "ablation.csv")],
    )
    rows, summary = ablation_runner(
        source, target, cells, seeds,
        _encoder_config(cfg), _decoder_config(cfg), _train_config(cfg),
        out / "runs", out_csv=out / "ablation.csv",
    )
    for s in summary:
        print(
            f"{s['mode']:>13} {s['decoders']:>6} depth={s['depth']:<2} "
            f"acc={s['mean']:.4f} +/- {s['std']:.4f}"
        )
    return 0


def cmd_reconstruct(args):
    model = load_checkpoint(args.checkpoint)
    data = load_folder(args.data)
    sel = data.domains == data.registry.index(args.source_domain)
    if not sel.any():
        raise ValidationError(f"no images in domain {args.source_domain!r}")
    images = data.images[sel][: args.count]
    decoders = None if args.decoder < 0 else [args.decoder]
    out = Path(args.out)
    write_manifest(
        out, "reconstruct",
        {"checkpoint": str(args.checkpoint), "source_domain": args.source_domain},
        {"root": args.seed}, [str(out)],
    )
    for i, img in enumerate(images):
        panels = reconstruction_grid(
            model, img, args.p_visible, substream_seed(args.seed, f"mask/{i}"),
            decoders=decoders,
        )
        _save_png(np.concatenate(panels, axis=2), out / f"recon_{i:03d}.png")
    print(f"wrote {len(images)} reconstruction grids -> {out}")
    return 0


def cmd_export_features(args):
    model = load_checkpoint(args.checkpoint)
    data = load_folder(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table = export_features(model, data, out)
    print(f"wrote {table.shape[0]} rows x {table.shape[1]} cols -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dimae",
        description="Cross-domain masked autoencoding with Fourier style mixing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write the synthetic multi-domain dataset")
    p.add_argument("--spec", help="JSON synthetic spec")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("augment", help="style-mix a folder of images")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--domains", required=True, help="comma-separated domain dirs")
    p.add_argument("--mode", required=True,
                   choices=["stylemix", "stylecut", "mixup", "cutmix"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON config (stylemix section)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("pretrain", help="run cross-domain masked pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", help="directory with checkpoint_last.npz/resume.pt")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    for name, fn in (("probe", cmd_probe), ("finetune", cmd_finetune)):
        p = sub.add_parser(name, help=f"cross-domain {name} evaluation")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--source-domains", required=True)
        p.add_argument("--target-domains", required=True)
        p.add_argument("--label-fraction", type=float, required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out")
        p.set_defaults(func=fn)

    p = sub.add_parser("ablate", help="augmentation/decoder ablation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--source-domains", required=True)
    p.add_argument("--target-domain", required=True)
    p.add_argument("--modes", default="stylemix,mixup,cutmix,none")
    p.add_argument("--decoders", default="multi,single")
    p.add_argument("--depths", default="8")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("reconstruct", help="dump reconstruction grids as PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--source-domain", required=True)
    p.add_argument("--decoder", type=int, default=-1, help="-1 = all decoders")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--p-visible", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("export-features", help="export probe features as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_features)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("DIMAE_NUM_THREADS")
    if threads:
        import torch

        torch.set_num_threads(int(threads))
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: validation: {e}", file=sys.stderr)
        return 3
    except TrainingDiverged as e:
        print(f"error: diverged: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
