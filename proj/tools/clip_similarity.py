#!/usr/bin/env python3
"""Print the CLIP image-text cosine similarity of one image and one statement.

Usage: clip_similarity.py IMAGE STATEMENT

Point SEVGRADE_SIMILARITY_CMD at this script to use it as the command
provider. The last line of stdout is the similarity.
"""
import argparse
import os

import torch
from PIL import Image
from transformers import CLIPModel, CLIPProcessor

MODEL = os.environ.get("SEVGRADE_CLIP_MODEL", "openai/clip-vit-base-patch32")


def similarity(image_path: str, statement: str) -> float:
    model = CLIPModel.from_pretrained(MODEL).eval()
    processor = CLIPProcessor.from_pretrained(MODEL)
    image = Image.open(image_path).convert("RGB")
    inputs = processor(text=[statement], images=image, return_tensors="pt", padding=True)
    with torch.no_grad():
        img = model.get_image_features(pixel_values=inputs["pixel_values"])
        txt = model.get_text_features(input_ids=inputs["input_ids"], attention_mask=inputs["attention_mask"])
    img = img / img.norm(dim=-1, keepdim=True)
    txt = txt / txt.norm(dim=-1, keepdim=True)
    return float((img * txt).sum())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("image")
    ap.add_argument("statement")
    args = ap.parse_args()
    print(f"{similarity(args.image, args.statement):.6f}")


if __name__ == "__main__":
    main()
