"""Over-smoothing diagnostics and embedding export."""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import layers as ly
from .sparse import normalized_laplacian


def distance_to_constant(H):
    """Relative distance of H from the nearest constant-rows matrix, in [0, 1].

    ||H - 1 mu^T||_F / max(||H||_F, 1e-12) where mu is the column-mean row.
    """
    H = np.asarray(H, dtype=np.float64)
    centered = H - H.mean(axis=0, keepdims=True)
    num = np.linalg.norm(centered)
    den = max(np.linalg.norm(H), 1e-12)
    return float(num / den)


def dirichlet_energy(H, adjacency):
    """0.5 * sum over edges of ||h_i/sqrt(1+d_i) - h_j/sqrt(1+d_j)||^2.

    Both directions of each undirected edge are stored, so each contributes
    twice at weight 0.5, i.e. once per unordered pair.
    """
    H = np.asarray(H, dtype=np.float64)
    deg = adjacency.row_sums()
    Hn = H / np.sqrt(1.0 + deg)[:, None]
    rows = adjacency.row_indices()
    cols = adjacency.col_indices
    total = 0.0
    step = max(1, int(4e6 // max(1, H.shape[1])))
    for lo in range(0, rows.shape[0], step):
        d = Hn[rows[lo : lo + step]] - Hn[cols[lo : lo + step]]
        total += float((d * d).sum())
    return 0.5 * total


@dataclass
class CollapseReport:
    distance_to_constant: float
    dirichlet_energy: float
    per_layer: list = field(default_factory=list)

    def to_dict(self):
        return {
            "distance_to_constant": self.distance_to_constant,
            "dirichlet_energy": self.dirichlet_energy,
            "per_layer": self.per_layer,
        }

    @staticmethod
    def from_dict(d):
        return CollapseReport(
            distance_to_constant=d["distance_to_constant"],
            dirichlet_energy=d["dirichlet_energy"],
            per_layer=list(d.get("per_layer", [])),
        )


def collapse_report(stack, data, L=None, per_layer=False):
    """Diagnostics on the final hidden features (and optionally every layer)."""
    if L is None:
        L = normalized_laplacian(data.adjacency)
    _, hidden = ly.stack_forward(stack, L, data.X, return_hidden=True)
    rep = CollapseReport(
        distance_to_constant=distance_to_constant(hidden[-1]),
        dirichlet_energy=dirichlet_energy(hidden[-1], data.adjacency),
    )
    if per_layer:
        rep.per_layer = [
            {
                "distance_to_constant": distance_to_constant(h),
                "dirichlet_energy": dirichlet_energy(h, data.adjacency),
            }
            for h in hidden[1:]
        ]
    return rep


def export_embeddings(stack, data, layer_index, path, L=None):
    """Write one layer's features as CSV: node_id, label, dim_0..dim_{d-1}.

    ``layer_index`` 0 is the prepared input; k is the output of layer k.
    """
    if L is None:
        L = normalized_laplacian(data.adjacency)
    _, hidden = ly.stack_forward(stack, L, data.X, return_hidden=True)
    if not 0 <= layer_index < len(hidden):
        raise ValueError(f"layer index {layer_index} outside [0, {len(hidden) - 1}]")
    H = np.asarray(hidden[layer_index], dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "label"] + [f"dim_{k}" for k in range(H.shape[1])])
        for i in range(H.shape[0]):
            w.writerow([i, int(data.labels[i])] + [f"{v:.8e}" for v in H[i]])
    return path
