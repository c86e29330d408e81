"""Command-line entry point for exporting benchmark classes."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExportConfig
from .export import export_dataset
from .layout import LayoutError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-exporter",
        description="Export patch/prompt embeddings from an anomaly benchmark class",
    )
    parser.add_argument("--root", required=True, help="benchmark dataset root")
    parser.add_argument("--class-name", required=True)
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.add_argument("--backbone", default="stub",
                        help='"stub", "stub:<dim>:<patch>", or a CLIP model name')
    parser.add_argument("--resize", type=int, default=256)
    parser.add_argument("--template-normal", default="a photo of a normal {c}")
    parser.add_argument("--template-abnormal", default="a photo of a defective {c}")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--config-json", default=None,
                        help="JSON file with ExportConfig fields; flags override")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    fields = {
        "dataset_root": args.root,
        "class_name": args.class_name,
        "out_dir": args.out,
        "backbone": args.backbone,
        "resize": args.resize,
        "template_normal": args.template_normal,
        "template_abnormal": args.template_abnormal,
        "device": args.device,
    }
    if args.config_json:
        base = json.loads(Path(args.config_json).read_text(encoding="utf-8"))
        base.update(fields)
        fields = base
    try:
        config = ExportConfig(**fields)
        out = export_dataset(config)
    except (LayoutError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {config.class_name} to {out}")
    return 0


def main() -> None:
    sys.exit(run())
