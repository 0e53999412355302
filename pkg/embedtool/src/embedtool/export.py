"""Encode a label file and write the embeddings CSV contract."""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass

from . import OOVLabel
from .encoders import load_encoder
from .labels import LabelFile


@dataclass(frozen=True)
class ExportResult:
    written: int
    skipped: tuple[str, ...]  # keys whose label could not be encoded


def export_embeddings(labels: LabelFile, encoder_name: str, out_path, *,
                      model_path=None, log=None) -> ExportResult:
    """One ``key,v_1,...,v_E`` row per label.

    Labels the word encoder cannot represent (all tokens out of vocabulary)
    are skipped and logged rather than failing the export.
    """
    if log is None:
        log = lambda message: print(message, file=sys.stderr)
    encoder = load_encoder(encoder_name, model_path)
    skipped = []
    rows = []
    for key, label in labels.rows:
        try:
            vector = encoder.encode(label)
        except OOVLabel as exc:
            skipped.append(key)
            log(f"skipping {key!r}: {exc}")
            continue
        rows.append((key, vector))
    with open(out_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["key", *(f"v_{i + 1}" for i in range(encoder.dimension))])
        for key, vector in rows:
            writer.writerow([key, *(repr(float(v)) for v in vector)])
    return ExportResult(written=len(rows), skipped=tuple(skipped))
