"""Command-line wrapper: export traces from a saved torch model.

The model argument is either a TorchScript archive (.pt loaded with
torch.jit.load) or a pickled nn.Module (torch.load). Layer names follow the
model's named_modules() paths.
"""

from __future__ import annotations

import argparse
import json
import sys

import torch

from .export import ExportError, export_traces, validate_export


def load_model(path: str) -> torch.nn.Module:
    try:
        return torch.jit.load(path, map_location="cpu")
    except Exception:
        model = torch.load(path, map_location="cpu", weights_only=False)
        if not isinstance(model, torch.nn.Module):
            raise ExportError(f"{path}: not a torch module")
        return model


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="trace-exporter", description=__doc__)
    parser.add_argument("--model", required=True, help="TorchScript or pickled nn.Module file")
    parser.add_argument("--model-id", default="host-model")
    parser.add_argument("--layers", required=True, help="comma-separated named_modules paths")
    parser.add_argument("--images", required=True, help="directory of input images")
    parser.add_argument("--out", required=True, help="output trace directory")
    parser.add_argument("--preprocessing", default="{}",
                        help='JSON, e.g. {"resize": [96, 192], "mean": [...], "std": [...]}')
    args = parser.parse_args(argv)
    try:
        model = load_model(args.model)
        manifest = export_traces(
            model,
            [name.strip() for name in args.layers.split(",") if name.strip()],
            args.images,
            args.out,
            model_id=args.model_id,
            preprocessing=json.loads(args.preprocessing),
        )
        validate_export(manifest.path)
    except (ExportError, OSError, json.JSONDecodeError) as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(manifest.images)} images x {len(manifest.layers)} layers "
          f"to {manifest.path.parent}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
