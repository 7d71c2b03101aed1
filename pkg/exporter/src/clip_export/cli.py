"""CLI: export an image folder to an ESB1 embedding store."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportError, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="clip-export",
        description="Encode a folder of class subfolders into an ESB1 store",
    )
    p.add_argument("--image-root", required=True, help="directory with one subdirectory per class")
    p.add_argument("--model", required=True, help="CLIP checkpoint name or local path")
    p.add_argument("--prompt", default="A photo of {}", help="class prompt template with one {}")
    p.add_argument("--out", required=True, help="ESB1 output path")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--device", default="cpu")
    p.add_argument("--summary", help="summary JSON path (default: <out>.summary.json)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        image_root=args.image_root,
        model_name=args.model,
        output_path=args.out,
        prompt_template=args.prompt,
        batch_size=args.batch_size,
        device=args.device,
    )
    try:
        summary = export(job)
    except ExportError as e:
        print(f"ExportError: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"IoError: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # model loading / inference failures
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    summary_path = args.summary or (str(args.out) + ".summary.json")
    with open(summary_path, "w") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
