#!/usr/bin/env python3
"""Fetch MNIST / Fashion-MNIST into a local data directory as IDX files.

Both datasets are pulled from npm package tarballs (the only mirror reachable
from the build sandbox). MNIST ships the original IDX files unchanged.
Fashion-MNIST ships one JSON array of 784-byte images per class (7000 each,
with stray empty records that are dropped); it is rewritten to IDX with the
first 1000 images of each class as the test split and the following 6000 as
the training split, interleaved class by class.

Layout produced:
    <out>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
    <out>/fashion_mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
"""
import argparse
import json
import pathlib
import shutil
import struct
import subprocess
import tarfile
import tempfile

TEST_PER_CLASS = 1000


def npm_pack(name: str, workdir: pathlib.Path) -> pathlib.Path:
    out = subprocess.run(["npm", "pack", name], cwd=workdir, check=True,
                         capture_output=True, text=True).stdout.strip().splitlines()[-1]
    return workdir / out


def write_idx(path: pathlib.Path, images, labels_path: pathlib.Path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def fetch_mnist(out: pathlib.Path, work: pathlib.Path):
    tgz = npm_pack("mnist-data@1.2.6", work)
    dest = out / "mnist"
    dest.mkdir(parents=True, exist_ok=True)
    with tarfile.open(tgz) as tar:
        for m in tar.getmembers():
            if m.name.startswith("package/data/") and m.isfile():
                with tar.extractfile(m) as src, open(dest / pathlib.Path(m.name).name, "wb") as dst:
                    shutil.copyfileobj(src, dst)


def fetch_fashion(out: pathlib.Path, work: pathlib.Path):
    tgz = npm_pack("fashion-mnist@1.1.0", work)
    per_class = []
    with tarfile.open(tgz) as tar:
        for k in range(10):
            with tar.extractfile(f"package/src/clothes/{k}.json") as f:
                per_class.append([img for img in json.load(f)["data"] if len(img) == 784])
    splits = {"train": ([], []), "t10k": ([], [])}
    longest = max(len(c) for c in per_class)
    for i in range(longest):
        for k, imgs in enumerate(per_class):
            if i < len(imgs):
                split = "t10k" if i < TEST_PER_CLASS else "train"
                splits[split][0].append(imgs[i])
                splits[split][1].append(k)
    dest = out / "fashion_mnist"
    dest.mkdir(parents=True, exist_ok=True)
    for split, (images, labels) in splits.items():
        write_idx(dest / f"{split}-images-idx3-ubyte", images,
                  dest / f"{split}-labels-idx1-ubyte", labels)
        print(f"fashion_mnist {split}: {len(images)} images")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=pathlib.Path, help="data directory (RETINOTOPIC_DATA_DIR)")
    ap.add_argument("--only", choices=["mnist", "fashion_mnist"])
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        work = pathlib.Path(tmp)
        if args.only in (None, "mnist"):
            fetch_mnist(args.out, work)
        if args.only in (None, "fashion_mnist"):
            fetch_fashion(args.out, work)


if __name__ == "__main__":
    main()
