#!/usr/bin/env python3
"""Unpack a PathMNIST .npz archive into the on-disk layout the histology
ingester expects: <out>/{train,val,test}/labels.csv plus one PNG per patch.

The archive's own split assignment is kept as-is; nothing is re-split.

Usage:
    python3 tools/export_pathmnist.py --npz pathmnist.npz --out /data/pathmnist
"""

import argparse
import csv
import os

import numpy as np
from PIL import Image


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--npz", required=True)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    data = np.load(args.npz)
    for split in ("train", "val", "test"):
        images = data[f"{split}_images"]
        labels = data[f"{split}_labels"].reshape(-1)
        split_dir = os.path.join(args.out, split)
        os.makedirs(split_dir, exist_ok=True)
        with open(os.path.join(split_dir, "labels.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["filename", "label"])
            for i, (img, label) in enumerate(zip(images, labels)):
                filename = f"{i:06}.png"
                Image.fromarray(img).save(os.path.join(split_dir, filename))
                writer.writerow([filename, int(label)])
        print(f"{split}: {len(labels)} images")


if __name__ == "__main__":
    main()
