"""``embed labels`` and ``embed images``: feature extraction to OTDF files.

Exit codes: 0 success, 2 input errors (bad template, missing files,
unloadable model).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .crops import CropSpec, crop_views
from .encoders import EncoderError, load_encoder
from .otdf import labels_sidecar, manifest_sidecar, write_labels, write_manifest, write_matrix

DEFAULT_MODEL = "openai/clip-vit-base-patch16"
PLACEHOLDER = "[CLASS]"

EXIT_OK = 0
EXIT_INPUT_ERROR = 2

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp", ".tif", ".tiff"}


def cmd_labels(args) -> int:
    names = [line for line in Path(args.labels).read_text(encoding="utf-8").splitlines() if line]
    if not names:
        raise ValueError(f"{args.labels}: no labels found")
    if len(set(names)) != len(names):
        raise ValueError(f"{args.labels}: label names must be unique")
    if args.template.count(PLACEHOLDER) != 1:
        raise ValueError(f"template must contain exactly one {PLACEHOLDER} placeholder")
    prompts = [args.template.replace(PLACEHOLDER, name) for name in names]

    encoder = load_encoder(args.model, batch_size=args.batch_size)
    features = encoder.encode_texts(prompts)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_matrix(features, out)
    write_labels(names, labels_sidecar(out))
    print(f"labels: {features.shape[0]} x {features.shape[1]} -> {out}")
    return EXIT_OK


def _image_files(directory: Path) -> list[Path]:
    files = [
        p for p in sorted(directory.iterdir())
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    ]
    if not files:
        raise ValueError(f"{directory}: no image files found")
    return files


def cmd_images(args) -> int:
    directory = Path(args.dir)
    if not directory.is_dir():
        raise ValueError(f"{directory}: not a directory")
    spec = CropSpec(
        n_views=args.n_views,
        scale_range=(args.scale_min, args.scale_max),
        aspect_range=(args.aspect_min, args.aspect_max),
        output_side=args.output_side,
        seed=args.seed,
    )
    encoder = load_encoder(args.model, batch_size=args.batch_size)

    originals = []
    views = []
    entries = []
    image_index = 0
    for path in _image_files(directory):
        try:
            with Image.open(path) as img:
                frames = crop_views(img, image_index, spec)
        except (UnidentifiedImageError, OSError) as exc:
            print(f"warning: skipping undecodable image {path}: {exc}", file=sys.stderr)
            continue
        feats = encoder.encode_images(frames)
        originals.append(feats[0])
        start = len(views)
        views.extend(feats[1:])
        entries.append((path.name, image_index, start, start + spec.n_views))
        image_index += 1

    if not entries:
        raise ValueError(f"{directory}: every image failed to decode")

    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    originals_path = prefix.with_name(prefix.name + ".originals.otdf")
    views_path = prefix.with_name(prefix.name + ".views.otdf")
    write_matrix(np.vstack(originals), originals_path)
    write_matrix(np.vstack(views), views_path)
    write_manifest(spec.n_views, entries, manifest_sidecar(views_path))
    print(
        f"images: {len(entries)} originals, {len(views)} views "
        f"({spec.n_views}/image) -> {originals_path}, {views_path}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed", description="Extract OTDF feature files from labels and images"
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("labels", help="encode prompted class labels")
    p.add_argument("--labels", required=True, help="text file, one label per line")
    p.add_argument("--template", default=f"a photo of a {PLACEHOLDER}")
    p.add_argument("--model", default=DEFAULT_MODEL,
                   help=f"checkpoint id or mock:<dim> (default {DEFAULT_MODEL})")
    p.add_argument("--out", required=True, help="output OTDF path")
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.set_defaults(handler=cmd_labels)

    p = sub.add_parser("images", help="encode originals plus random-crop views")
    p.add_argument("--dir", required=True, help="directory of images")
    p.add_argument("--n-views", type=int, default=256, dest="n_views")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", default=DEFAULT_MODEL)
    p.add_argument("--out-prefix", required=True, dest="out_prefix",
                   help="writes <prefix>.originals.otdf, <prefix>.views.otdf + manifest")
    p.add_argument("--scale-min", type=float, default=0.2, dest="scale_min")
    p.add_argument("--scale-max", type=float, default=1.0, dest="scale_max")
    p.add_argument("--aspect-min", type=float, default=3.0 / 4.0, dest="aspect_min")
    p.add_argument("--aspect-max", type=float, default=4.0 / 3.0, dest="aspect_max")
    p.add_argument("--output-side", type=int, default=224, dest="output_side")
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.set_defaults(handler=cmd_images)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_INPUT_ERROR
    try:
        return args.handler(args)
    except (EncoderError, ValueError, OSError) as exc:
        print(f"embed {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
