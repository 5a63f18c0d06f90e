"""pda-adapter: extract | regen | transform.

Bridges image directories to the detection engine's PDAF feature files and
implements the engine's external regeneration contract:

    pda-adapter extract --in images/ --out features.pdaf --manifest manifest.tsv
    pda-adapter regen --manifest manifest.tsv --features features.pdaf IN.pdaf OUT.pdaf
    pda-adapter transform --in images/ --transform jpeg:90 --out-dir blurred/
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .features import AdapterConfig, extract_features
from .pdaf import write_pdaf
from .regen import match_rows_to_manifest, read_manifest, regenerate_paths
from .transform import transform_images

logger = logging.getLogger(__name__)


def _config_from_args(args) -> AdapterConfig:
    return AdapterConfig(
        backbone=args.backbone,
        weights=args.weights,
        generator=getattr(args, "generator", "identity"),
        device=args.device,
        batch_size=args.batch_size,
        seed=args.seed,
        regen_strength=getattr(args, "strength", 0.6),
        regen_steps=getattr(args, "steps", 30),
    )


def _add_backbone_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backbone", default="resnet50",
                   help="torchvision backbone (resnet18/resnet50/vgg19)")
    p.add_argument("--weights", default="none",
                   help='"none" (seeded random), "imagenet", or a checkpoint path')
    p.add_argument("--device", default="cpu")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)


def _cmd_extract(args) -> int:
    cfg = _config_from_args(args)
    matrix, kept = extract_features(args.indir, cfg)
    write_pdaf(args.out, matrix)
    if args.manifest:
        lines = [f"{i}\t{p}" for i, p in enumerate(kept)]
        Path(args.manifest).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"extracted {matrix.shape[0]} x {matrix.shape[1]} -> {args.out}")
    return 0


def _cmd_regen(args) -> int:
    cfg = _config_from_args(args)
    if args.features:
        paths = match_rows_to_manifest(args.infile, args.features, args.manifest)
    else:
        from .pdaf import read_pdaf

        incoming, _ = read_pdaf(args.infile)
        entries = read_manifest(args.manifest)
        if len(incoming) != len(entries):
            print(
                f"error: {len(incoming)} input rows vs {len(entries)} manifest entries; "
                "pass --features for payload matching",
                file=sys.stderr,
            )
            return 1
        paths = [p for _, p in entries]
    rows, failed = regenerate_paths(paths, cfg)
    if failed:
        print(f"error: regeneration failed for rows {failed}", file=sys.stderr)
        return 1
    write_pdaf(args.outfile, rows)
    print(f"regenerated {rows.shape[0]} x {rows.shape[1]} -> {args.outfile}")
    return 0


def _cmd_transform(args) -> int:
    written = transform_images(args.indir, args.transform, args.out_dir)
    print(f"wrote {len(written)} images -> {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pda-adapter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="backbone features for an image directory")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", required=True, metavar="PDAF")
    p.add_argument("--manifest", help="also write an id<TAB>path manifest")
    _add_backbone_flags(p)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("regen", help="regenerate and re-extract (engine regen contract)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", help="extraction PDAF aligned with the manifest")
    p.add_argument("--generator", default="identity",
                   help='"identity" or "diffusers:<model-id>"')
    p.add_argument("--strength", type=float, default=0.6)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("infile", metavar="IN.pdaf")
    p.add_argument("outfile", metavar="OUT.pdaf")
    _add_backbone_flags(p)
    p.set_defaults(func=_cmd_regen)

    p = sub.add_parser("transform", help="blur / jpeg robustness transforms")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--transform", required=True,
                   help="gaussian_blur:{3,5,7} or jpeg:{90,70,50}")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_transform)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
