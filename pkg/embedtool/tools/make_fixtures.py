"""Regenerate the committed test fixtures (deterministic).

Produces a 16-row label file and a 300-dim word-vector file covering every
non-stop-word token in those labels, in word2vec text format.
"""

import csv
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
from embedtool.encoders import tokenize  # noqa: E402
from embedtool.stopwords import STOPWORDS  # noqa: E402

LABELS = [
    ("L01", "manufacture of wooden furniture"),
    ("L02", "production of mineral water"),
    ("L03", "construction of residential buildings"),
    ("L04", "retail trade of household goods"),
    ("L05", "cultivation of cereal crops"),
    ("L06", "breeding of dairy cattle"),
    ("L07", "processing of metal waste"),
    ("L08", "weaving of textile fabrics"),
    ("L09", "printing of newspapers and books"),
    ("L10", "repair of electrical machinery"),
    ("L11", "transport of frozen goods"),
    ("L12", "storage and warehousing services"),
    ("L13", "extraction of natural gas"),
    ("L14", "manufacture of glass containers"),
    ("L15", "catering and canteen services"),
    ("L16", "education of young children"),
]

DIM = 300


def main():
    outdir = os.path.join(os.path.dirname(__file__), "..", "fixtures")
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "labels_16.csv"), "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["key", "label"])
        writer.writerows(LABELS)

    vocabulary = sorted({t for _, label in LABELS for t in tokenize(label)
                         if t not in STOPWORDS})
    rng = np.random.default_rng(16300)
    with open(os.path.join(outdir, "word_vectors_300d.txt"), "w") as handle:
        handle.write(f"{len(vocabulary)} {DIM}\n")
        for token in vocabulary:
            values = rng.normal(0.0, 0.3, size=DIM).round(6)
            handle.write(token + " " + " ".join(f"{v:.6f}" for v in values) + "\n")
    print(f"wrote {len(LABELS)} labels and {len(vocabulary)} word vectors")


if __name__ == "__main__":
    main()
