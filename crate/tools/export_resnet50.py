#!/usr/bin/env python3
"""Convert torchvision ResNet-50 ImageNet weights into a colopath checkpoint
archive, for use with `pretrained = true` / `--pretrained true`.

Requires torch + torchvision (only for this conversion; the Rust pipeline
itself has no Python dependency). By default the script downloads the
IMAGENET1K_V1 weights through torchvision's cache; pass --weights to convert
an already-downloaded state dict instead.

Usage:
    python3 tools/export_resnet50.py --out ~/.cache/colopath/resnet50_imagenet.ckpt
"""

import argparse
import json
import os
import struct

MAGIC = b"COLOCKP1"

BN_SUFFIX = {
    "weight": "gamma",
    "bias": "beta",
    "running_mean": "running_mean",
    "running_var": "running_var",
}


def rename(key):
    """Map a torchvision state-dict key onto the archive's tensor name, or
    None for keys the archive does not carry (num_batches_tracked)."""
    if key == "conv1.weight":
        return "stem.conv.weight"
    if key.startswith("bn1."):
        suffix = key.split(".", 1)[1]
        return "stem.bn." + BN_SUFFIX[suffix] if suffix in BN_SUFFIX else None
    if key.startswith("fc."):
        return key
    if key.startswith("layer"):
        parts = key.split(".")
        block = ".".join(parts[:2])  # layerL.B
        if parts[2].startswith("conv"):
            return key
        if parts[2].startswith("bn"):
            return f"{block}.{parts[2]}.{BN_SUFFIX[parts[3]]}" if parts[3] in BN_SUFFIX else None
        if parts[2] == "downsample":
            kind = "conv" if parts[3] == "0" else "bn"
            if kind == "conv":
                return f"{block}.downsample.conv.weight"
            return (
                f"{block}.downsample.bn.{BN_SUFFIX[parts[4]]}"
                if parts[4] in BN_SUFFIX
                else None
            )
    return None


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument(
        "--out",
        default=os.path.expanduser("~/.cache/colopath/resnet50_imagenet.ckpt"),
    )
    ap.add_argument(
        "--weights",
        default=None,
        help="path to a torchvision resnet50 state dict (.pth); downloaded if omitted",
    )
    args = ap.parse_args()

    import torch

    if args.weights:
        state = torch.load(args.weights, map_location="cpu", weights_only=True)
        if "state_dict" in state:
            state = state["state_dict"]
    else:
        from torchvision.models import ResNet50_Weights, resnet50

        state = resnet50(weights=ResNet50_Weights.IMAGENET1K_V1).state_dict()

    tensors = []
    for key, value in state.items():
        name = rename(key)
        if name is None:
            continue
        tensors.append((name, value.detach().to(torch.float32).contiguous()))
    tensors.sort(key=lambda kv: kv[0])

    header = {
        "arch": "resnet50",
        "num_classes": int(state["fc.weight"].shape[0]),
        "input_side": 224,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    header_bytes = json.dumps(header).encode("utf-8")

    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for _, tensor in tensors:
            f.write(tensor.numpy().astype("<f4").tobytes())
    print(f"wrote {len(tensors)} tensors to {args.out}")
    print("point COLOPATH_PRETRAINED at this file or keep the default path")


if __name__ == "__main__":
    main()
