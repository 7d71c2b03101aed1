"""Folder-of-class-folders to ESB1: scan, encode, write, summarize."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from PIL import Image

from .encoder import ClipEncoder
from .esb_writer import write_store


class ExportError(Exception):
    pass


@dataclass
class ExportJob:
    image_root: str
    model_name: str
    output_path: str
    prompt_template: str = "A photo of {}"
    batch_size: int = 16
    device: str = "cpu"

    def validate(self) -> None:
        if self.prompt_template.count("{}") != 1:
            raise ExportError(
                "prompt template must contain exactly one {} placeholder, "
                f"got {self.prompt_template!r}"
            )
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")
        if not os.path.isdir(self.image_root):
            raise ExportError(f"image root {self.image_root!r} is not a directory")


def format_prompt(template: str, class_name: str) -> str:
    return template.format(class_name)


def scan_image_root(root: str) -> tuple[list[str], list[tuple[int, str]]]:
    """Class subdirectories in alphabetical order, files sorted within each.

    Returns (class_names, [(label, relative_path), ...]) in dataset order.
    """
    classes = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not classes:
        raise ExportError(f"no class subdirectories under {root!r}")
    entries: list[tuple[int, str]] = []
    for label, cls in enumerate(classes):
        cls_dir = os.path.join(root, cls)
        files = sorted(
            f for f in os.listdir(cls_dir) if os.path.isfile(os.path.join(cls_dir, f))
        )
        if not files:
            raise ExportError(f"class directory {cls!r} contains no files")
        entries.extend((label, f"{cls}/{f}") for f in files)
    return classes, entries


def export(job: ExportJob, encoder: ClipEncoder | None = None) -> dict:
    """Run the encoder over every image, write the ESB1 file, return a summary.

    Undecodable images are skipped and listed in the summary; the job fails
    only if a class ends up with no usable images.
    """
    job.validate()
    if encoder is None:
        encoder = ClipEncoder(job.model_name, device=job.device)

    classes, entries = scan_image_root(job.image_root)
    failures: list[dict] = []
    kept: list[tuple[int, str]] = []
    images: list[Image.Image] = []
    for label, rel in entries:
        path = os.path.join(job.image_root, rel)
        try:
            with Image.open(path) as img:
                images.append(img.convert("RGB"))
        except Exception as e:  # decode errors vary by format plugin
            failures.append({"path": rel, "error": f"{type(e).__name__}: {e}"})
            continue
        kept.append((label, rel))

    present = {label for label, _ in kept}
    for label, cls in enumerate(classes):
        if label not in present:
            raise ExportError(
                f"class {cls!r} has no decodable images "
                f"({len(failures)} failure(s) overall)"
            )

    import numpy as np

    chunks = []
    for lo in range(0, len(images), job.batch_size):
        chunks.append(encoder.encode_images(images[lo : lo + job.batch_size]))
    image_embeddings = np.concatenate(chunks, axis=0)

    prompts = [format_prompt(job.prompt_template, cls) for cls in classes]
    text_embeddings = encoder.encode_texts(prompts)

    labels = [label for label, _ in kept]
    sample_ids = [rel for _, rel in kept]
    write_store(
        image_embeddings=image_embeddings,
        labels=labels,
        sample_ids=sample_ids,
        text_embeddings=text_embeddings,
        class_names=classes,
        prompt_template=job.prompt_template,
        path=job.output_path,
    )
    return {
        "n": len(kept),
        "k": len(classes),
        "dim": encoder.dim,
        "classes": classes,
        "prompts": prompts,
        "failures": failures,
        "output": str(job.output_path),
    }
