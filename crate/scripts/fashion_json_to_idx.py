"""Converts the per-class JSON dump of Fashion-MNIST into IDX files.

Each class file holds 7000 images: the first 1000 come from the test split and
the remaining 6000 from the training split (class 0 carries two empty separator
rows, which are dropped). Images are interleaved round-robin across classes.
"""
import json
import struct
import sys
from pathlib import Path

TEST_PER_CLASS = 1000



def dump(out_dir, prefix, images, labels):
    with open(out_dir / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(out_dir / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def interleave(per_class):
    images, labels = [], []
    longest = max(len(v) for v in per_class)
    for i in range(longest):
        for cls, rows in enumerate(per_class):
            if i < len(rows):
                images.append(rows[i])
                labels.append(cls)
    return images, labels


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for cls in range(10):
        rows = json.loads((src / f"{cls}.json").read_text())["data"]
        rows = [r for r in rows if len(r) == 784]
        assert len(rows) == 7000, (cls, len(rows))
        assert all(0 <= v <= 255 for r in rows for v in r)
        test.append(rows[:TEST_PER_CLASS])
        train.append(rows[TEST_PER_CLASS:])
    dump(out, "train", *interleave(train))
    dump(out, "t10k", *interleave(test))


if __name__ == "__main__":
    main()
