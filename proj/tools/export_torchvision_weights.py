#!/usr/bin/env python3
"""Write torchvision ImageNet weights for alexnet or vgg16 as an SGW1 blob.

Usage: export_torchvision_weights.py {alexnet,vgg16} OUT.sgw
"""
import argparse
import struct

import torch
import torchvision


def write_blob(model: torch.nn.Module, out_path: str) -> int:
    tensors = [(k, v) for k, v in model.state_dict().items() if k.startswith("features.")]
    with open(out_path, "wb") as f:
        f.write(b"SGW1")
        f.write(struct.pack("<I", len(tensors)))
        for name, t in tensors:
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", t.dim()))
            for d in t.shape:
                f.write(struct.pack("<I", d))
            f.write(t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
    return len(tensors)


def export(arch: str, out_path: str) -> int:
    ctor = {"alexnet": torchvision.models.alexnet, "vgg16": torchvision.models.vgg16}[arch]
    weights = {"alexnet": "AlexNet_Weights.IMAGENET1K_V1", "vgg16": "VGG16_Weights.IMAGENET1K_V1"}[arch]
    return write_blob(ctor(weights=weights).eval(), out_path)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("arch", choices=["alexnet", "vgg16"])
    ap.add_argument("out")
    args = ap.parse_args()
    n = export(args.arch, args.out)
    print(f"wrote {n} tensors to {args.out}")


if __name__ == "__main__":
    main()
