import pytest
import torch
from PIL import Image
from transformers import (
    CLIPConfig,
    CLIPImageProcessor,
    CLIPModel,
    CLIPProcessor,
    CLIPTokenizer,
)


def byte_alphabet():
    """The byte-level BPE alphabet CLIP tokenizers are built on."""
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(2**8):
        if b not in bs:
            bs.append(b)
            cs.append(2**8 + n)
            n += 1
    return [chr(c) for c in cs]


@pytest.fixture(scope="session")
def tiny_clip_dir(tmp_path_factory):
    """A fully offline miniature CLIP checkpoint (character-level tokenizer)."""
    d = tmp_path_factory.mktemp("tiny-clip")
    alphabet = byte_alphabet()
    vocab = {}
    for t in alphabet:
        vocab[t] = len(vocab)
    for t in [a + "</w>" for a in alphabet]:
        vocab[t] = len(vocab)
    vocab["<|startoftext|>"] = len(vocab)
    vocab["<|endoftext|>"] = len(vocab)
    tokenizer = CLIPTokenizer(vocab=vocab, merges=[])
    image_processor = CLIPImageProcessor(
        size={"shortest_edge": 32}, crop_size={"height": 32, "width": 32}
    )
    processor = CLIPProcessor(image_processor=image_processor, tokenizer=tokenizer)

    config = CLIPConfig(
        text_config={
            "hidden_size": 16,
            "intermediate_size": 32,
            "num_hidden_layers": 1,
            "num_attention_heads": 2,
            "vocab_size": len(vocab),
            "max_position_embeddings": 77,
            "bos_token_id": vocab["<|startoftext|>"],
            "eos_token_id": vocab["<|endoftext|>"],
            "pad_token_id": vocab["<|endoftext|>"],
        },
        vision_config={
            "hidden_size": 16,
            "intermediate_size": 32,
            "num_hidden_layers": 1,
            "num_attention_heads": 2,
            "image_size": 32,
            "patch_size": 16,
        },
        projection_dim=8,
    )
    torch.manual_seed(1234)
    model = CLIPModel(config)
    model.save_pretrained(d)
    processor.save_pretrained(d)
    return str(d)


@pytest.fixture()
def image_fixture(tmp_path):
    """2 classes x 3 solid/gradient images, the acceptance fixture shape."""
    root = tmp_path / "images"
    colors = {
        "cat": [(220, 40, 40), (40, 220, 40), (40, 40, 220)],
        "dog": [(200, 200, 0), (0, 200, 200), (200, 0, 200)],
    }
    for cls, shades in colors.items():
        (root / cls).mkdir(parents=True)
        for i, rgb in enumerate(shades):
            img = Image.new("RGB", (24, 24), rgb)
            for x in range(24):  # mild gradient so images differ pixel-wise
                img.putpixel((x, i), ((rgb[0] + 4 * x) % 256, rgb[1], rgb[2]))
            img.save(root / cls / f"img_{i}.png")
    return root
