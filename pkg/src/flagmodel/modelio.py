"""One self-describing JSON document per fitted model: the matrices, the
extracted structure, and the provenance of the run that produced them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ModelFile", "save_model", "load_model"]


@dataclass
class ModelFile:
    l: np.ndarray
    s: np.ndarray
    k_hat: int
    edges: tuple[tuple[int, int], ...]
    a: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n_items(self) -> int:
        return self.l.shape[0]

    @property
    def m(self) -> np.ndarray:
        return self.l + self.s


def save_model(model: ModelFile, path) -> None:
    doc = {
        "j_items": int(model.n_items),
        "k_hat": int(model.k_hat),
        "edges": [[int(i), int(j)] for i, j in model.edges],
        "L": model.l.tolist(),
        "S": model.s.tolist(),
        "A": model.a.tolist() if model.a is not None else None,
        "provenance": model.provenance,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> ModelFile:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    l = np.asarray(doc["L"], dtype=np.float64)
    s = np.asarray(doc["S"], dtype=np.float64)
    a = doc.get("A")
    return ModelFile(
        l=l,
        s=s,
        k_hat=int(doc["k_hat"]),
        edges=tuple((int(i), int(j)) for i, j in doc["edges"]),
        a=np.asarray(a, dtype=np.float64) if a is not None else None,
        provenance=doc.get("provenance", {}),
    )
