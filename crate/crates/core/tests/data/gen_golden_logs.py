# Independent TDLG writer used to freeze golden trajectory files. Writes
# golden/<name>.tdlg and golden/corpus.json with each log's inputs (labels,
# recording mode, f64 probabilities before f32 narrowing).
import json
import os
import random
import struct
import zlib

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "golden")


def tdlg_bytes(labels, n_classes, mode, epochs):
    n = len(labels)
    body = struct.pack("<IBBHQII", 1, 0, mode, 0, n, n_classes, len(epochs))
    body += b"".join(struct.pack("<I", y) for y in labels)
    for block in epochs:
        for row in block:
            body += b"".join(struct.pack("<f", p) for p in row)
    return b"TDLG" + body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def random_log(rng):
    n = rng.randint(1, 12)
    c = rng.randint(2, 6)
    t = rng.randint(2, 8)
    labels = [rng.randrange(c) for _ in range(n)]
    epochs = []
    for _ in range(t):
        block = []
        for _ in range(n):
            raw = [rng.random() ** 3 for _ in range(c)]
            s = sum(raw)
            block.append([v / s for v in raw])
        epochs.append(block)
    return {"labels": labels, "n_classes": c, "mode": rng.randrange(2), "epochs": epochs}


def main():
    os.makedirs(OUT, exist_ok=True)
    corpus = {
        "fixed_2x2x2": {
            "labels": [0, 1],
            "n_classes": 2,
            "mode": 0,
            "epochs": [[[0.5, 0.5], [0.25, 0.75]], [[0.9, 0.1], [0.125, 0.875]]],
        }
    }
    rng = random.Random(20240618)
    for i in range(12):
        corpus["random_%02d" % i] = random_log(rng)
    for name, log in corpus.items():
        data = tdlg_bytes(log["labels"], log["n_classes"], log["mode"], log["epochs"])
        with open(os.path.join(OUT, name + ".tdlg"), "wb") as f:
            f.write(data)
    with open(os.path.join(OUT, "corpus.json"), "w") as f:
        json.dump(corpus, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
