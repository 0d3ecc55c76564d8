"""Prototype-set management, the average-linkage bias diagnostic, and
cross-domain representation swapping via ridge regression.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, DegenerateVectorError, ShapeError, ValidationError
from .linalg import EPS_NORM, as_matrix, load_matrix, ridge_solve, save_matrix


@dataclass
class PrototypeSet:
    """Class prototypes stored as columns of an A_dim x C matrix.

    Columns are kept sorted by class id, which makes argmax tie-breaking
    (lowest class id wins) fall out of plain np.argmax. ``seen_mask`` marks
    the seen partition; the rest are unseen.
    """

    matrix: np.ndarray
    class_ids: np.ndarray
    seen_mask: np.ndarray
    domain: str = "att"

    def __post_init__(self):
        self.matrix = as_matrix(self.matrix, "prototypes")
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.seen_mask = np.asarray(self.seen_mask, dtype=bool)
        c = self.matrix.shape[1]
        if self.class_ids.shape != (c,):
            raise ShapeError(f"expected {c} class ids, got {self.class_ids.shape}")
        if self.seen_mask.shape != (c,):
            raise ShapeError(f"expected {c} mask entries, got {self.seen_mask.shape}")
        if len(np.unique(self.class_ids)) != c:
            raise ValidationError("duplicate class ids in prototype set")
        norms = np.linalg.norm(self.matrix, axis=0)
        if np.any(norms < EPS_NORM):
            bad = self.class_ids[norms < EPS_NORM]
            raise DegenerateVectorError(f"zero prototype column for class ids {bad.tolist()}")
        order = np.argsort(self.class_ids)
        self.class_ids = self.class_ids[order]
        self.seen_mask = self.seen_mask[order]
        self.matrix = np.ascontiguousarray(self.matrix[:, order])

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[1]

    @property
    def seen_ids(self) -> np.ndarray:
        return self.class_ids[self.seen_mask]

    @property
    def unseen_ids(self) -> np.ndarray:
        return self.class_ids[~self.seen_mask]

    @property
    def seen_matrix(self) -> np.ndarray:
        return self.matrix[:, self.seen_mask]

    @property
    def unseen_matrix(self) -> np.ndarray:
        return self.matrix[:, ~self.seen_mask]

    def universe(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        """(columns, class ids) for the requested class universe."""
        if which == "seen":
            return self.seen_matrix, self.seen_ids
        if which == "joint":
            return self.matrix, self.class_ids
        raise ValidationError(f"unknown class universe {which!r}")

    def column_indices(self, labels, which: str = "joint") -> np.ndarray:
        """Map class-id labels to column positions within a universe."""
        _, ids = self.universe(which)
        labels = np.asarray(labels, dtype=np.int64)
        pos = np.searchsorted(ids, labels)
        pos_clipped = np.clip(pos, 0, len(ids) - 1)
        bad = ids[pos_clipped] != labels
        if np.any(bad):
            missing = np.unique(labels[bad])
            raise ValidationError(
                f"labels without a prototype in the {which} universe: {missing.tolist()}"
            )
        return pos_clipped


def average_linkage(set_s, set_u) -> float:
    """Mean pairwise cosine similarity between two prototype collections.

    Accepts matrices with prototypes as columns. Symmetric in its arguments
    and invariant to positive rescaling of any prototype.
    """
    a = as_matrix(set_s, "set_s")
    b = as_matrix(set_u, "set_u")
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ValidationError("average linkage needs non-empty prototype sets")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    if np.any(na < EPS_NORM) or np.any(nb < EPS_NORM):
        raise DegenerateVectorError("zero prototype in linkage computation")
    sims = (a / na).T @ (b / nb)
    return float(sims.mean())


def linkage_pairs(protos: PrototypeSet) -> list[tuple[int, int, float]]:
    """Per-pair (seen id, unseen id, cosine) rows behind average_linkage."""
    s = protos.seen_matrix / np.linalg.norm(protos.seen_matrix, axis=0)
    u = protos.unseen_matrix / np.linalg.norm(protos.unseen_matrix, axis=0)
    sims = s.T @ u
    rows = []
    for i, sid in enumerate(protos.seen_ids):
        for j, uid in enumerate(protos.unseen_ids):
            rows.append((int(sid), int(uid), float(sims[i, j])))
    return rows


def swap_unseen(phi_a_seen, phi_b_seen, phi_a_unseen, lambda_beta: float) -> np.ndarray:
    """Regress unseen prototypes from domain A into domain B.

    Fits beta on the seen prototype pairs (shared class ordering) and applies
    it to the unseen domain-A prototypes, returning B_dim x |U| columns.
    """
    phi_a_unseen = as_matrix(phi_a_unseen, "phi_a_unseen")
    beta = ridge_solve(phi_a_seen, phi_b_seen, lambda_beta)
    if phi_a_unseen.shape[0] != beta.shape[1]:
        raise ShapeError(
            f"unseen prototypes have dim {phi_a_unseen.shape[0]}, "
            f"regression expects {beta.shape[1]}"
        )
    return beta @ phi_a_unseen


# ---------------------------------------------------------------------------
# File I/O: matrix file + JSON sidecar with ids, partition, and domain tag
# ---------------------------------------------------------------------------
def save_prototypes(matrix_path, protos: PrototypeSet) -> None:
    matrix_path = Path(matrix_path)
    save_matrix(matrix_path, protos.matrix)
    sidecar = {
        "class_ids": [int(c) for c in protos.class_ids],
        "seen_ids": [int(c) for c in protos.seen_ids],
        "domain": protos.domain,
    }
    with open(sidecar_path(matrix_path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sidecar_path(matrix_path) -> Path:
    matrix_path = Path(matrix_path)
    return matrix_path.with_suffix(matrix_path.suffix + ".json")


def load_prototypes(matrix_path, sidecar=None) -> PrototypeSet:
    matrix_path = Path(matrix_path)
    sidecar = Path(sidecar) if sidecar is not None else sidecar_path(matrix_path)
    matrix = load_matrix(matrix_path)
    if not sidecar.exists():
        raise FileNotFoundError(f"no prototype sidecar at {sidecar}")
    with open(sidecar, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    try:
        class_ids = np.asarray(meta["class_ids"], dtype=np.int64)
        seen_ids = set(int(c) for c in meta["seen_ids"])
        domain = meta.get("domain", "att")
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{sidecar}: malformed prototype sidecar: {exc}") from exc
    if matrix.shape[1] != len(class_ids):
        raise DataFormatError(
            f"{matrix_path}: {matrix.shape[1]} columns but {len(class_ids)} class ids"
        )
    seen_mask = np.asarray([int(c) in seen_ids for c in class_ids], dtype=bool)
    return PrototypeSet(matrix=matrix, class_ids=class_ids, seen_mask=seen_mask,
                        domain=domain)
