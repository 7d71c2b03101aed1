"""Thin wrapper around a pretrained CLIP checkpoint (frozen weights)."""

from __future__ import annotations

import numpy as np
import torch
from transformers import CLIPModel, CLIPProcessor


def _features(output) -> torch.Tensor:
    # transformers >= 5 returns a ModelOutput with the projection in
    # pooler_output; older versions return the projected tensor directly
    if hasattr(output, "pooler_output"):
        return output.pooler_output
    return output


class ClipEncoder:
    def __init__(self, model_name: str, device: str = "cpu"):
        self.model_name = model_name
        self.device = device
        self.model = CLIPModel.from_pretrained(model_name).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_name)

    @property
    def dim(self) -> int:
        return int(self.model.config.projection_dim)

    @torch.no_grad()
    def encode_images(self, images) -> np.ndarray:
        """PIL images -> (n, dim) float32 features, un-normalized."""
        inputs = self.processor(images=images, return_tensors="pt").to(self.device)
        feats = _features(self.model.get_image_features(**inputs))
        return feats.cpu().numpy().astype(np.float32)

    @torch.no_grad()
    def encode_texts(self, texts: list[str]) -> np.ndarray:
        inputs = self.processor(
            text=texts, return_tensors="pt", padding=True, truncation=True
        ).to(self.device)
        feats = _features(
            self.model.get_text_features(
                input_ids=inputs["input_ids"],
                attention_mask=inputs.get("attention_mask"),
            )
        )
        return feats.cpu().numpy().astype(np.float32)
