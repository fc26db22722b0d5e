"""Weighted heterogeneous context graph over molecules, genes, gene-expression
profiles, and cell-morphology profiles.

Nodes carry [0,1]-scaled feature vectors; undirected edges carry weights in
(0,1]. Perturbation edges are always weight 1. Similarity edges come from a
cosine threshold (0.8) combined with a top-fraction sparsity filter (keep
0.5% of all intra-kind pairs). After ``finalize()`` the graph is immutable
and exposes an adjacency index for the walker; a pair connected by several
relations is seen by the walker as one effective edge at the max weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import serialize
from .errors import (
    DuplicateIdError,
    FinalizedError,
    IncompatibleMergeError,
    MixedDimensionsError,
    SelfLoopError,
    TableFormatError,
    UnknownNodeError,
)
from .fingerprint import morgan_fingerprint
from .molparse import MolecularGraph, parse_smiles

MAGIC = b"CTXG"


class NodeKind(Enum):
    MOLECULE = "molecule"
    GENE = "gene"
    GENE_EXPRESSION = "gene_expression"
    CELL_MORPHOLOGY = "cell_morphology"


class Relation(Enum):
    PERTURBATION = "perturbation"
    SIMILARITY = "similarity"
    GENE_GENE = "gene_gene"
    GENE_MOLECULE = "gene_molecule"


@dataclass
class NodeRecord:
    id: str
    kind: NodeKind
    features: np.ndarray
    source_tag: str = ""
    smiles: Optional[str] = None
    mol: Optional[MolecularGraph] = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)

    @property
    def modality_dim(self) -> int:
        return len(self.features)


@dataclass(frozen=True)
class WeightedEdge:
    a: str
    b: str
    relation: Relation
    weight: float

    @property
    def endpoints(self) -> Tuple[str, str]:
        return (self.a, self.b)


def min_max_scale(columns) -> np.ndarray:
    """Scale each column to [0,1] by (x - min) / (max - min).

    Constant columns map to all-zeros (the scaler is undefined at max == min;
    zero is the conservative no-signal choice).
    """
    x = np.asarray(columns, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("expected a matrix with at least one row")
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    out = np.zeros_like(x)
    nonconst = span > 0
    out[:, nonconst] = (x[:, nonconst] - lo[nonconst]) / span[nonconst]
    return np.clip(out, 0.0, 1.0)


def _pair_key(a: str, b: str) -> Tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class ContextGraph:
    def __init__(self):
        self._nodes: Dict[str, NodeRecord] = {}
        # (id_lo, id_hi, relation) -> weight
        self._edges: Dict[Tuple[str, str, Relation], float] = {}
        self._finalized = False
        self._adjacency: Dict[str, List[Tuple[str, float]]] = {}
        self._stats: Optional[dict] = None

    # --- accessors -------------------------------------------------------

    @property
    def finalized(self) -> bool:
        return self._finalized

    def node_ids(self) -> List[str]:
        return list(self._nodes)

    def node(self, node_id: str) -> NodeRecord:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"unknown node id {node_id!r}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def num_nodes(self) -> int:
        return len(self._nodes)

    def num_edges(self) -> int:
        return len(self._edges)

    def edges(self) -> List[WeightedEdge]:
        return [
            WeightedEdge(a, b, rel, w)
            for (a, b, rel), w in sorted(
                self._edges.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)
            )
        ]

    def molecule_ids(self) -> List[str]:
        return [nid for nid, rec in self._nodes.items() if rec.kind is NodeKind.MOLECULE]

    def neighbors(self, node_id: str) -> List[Tuple[str, float]]:
        """Effective neighbors (max weight per pair); requires a finalized graph."""
        if not self._finalized:
            raise FinalizedError("neighbors() requires a finalized graph")
        self.node(node_id)
        return self._adjacency.get(node_id, [])

    # --- mutation --------------------------------------------------------

    def _check_mutable(self):
        if self._finalized:
            raise FinalizedError("graph is finalized; mutation rejected")

    def add_node(self, rec: NodeRecord) -> str:
        self._check_mutable()
        if rec.id in self._nodes:
            raise DuplicateIdError(f"node id {rec.id!r} already present")
        if rec.kind is NodeKind.MOLECULE and rec.mol is None and rec.smiles:
            rec.mol = parse_smiles(rec.smiles)
        self._nodes[rec.id] = rec
        return rec.id

    def add_edge(self, a: str, b: str, relation: Relation, weight: float) -> WeightedEdge:
        self._check_mutable()
        if a == b:
            raise SelfLoopError(f"self-loop on {a!r}")
        self.node(a)
        self.node(b)
        if not (0.0 < weight <= 1.0):
            raise ValueError(f"edge weight must be in (0, 1], got {weight}")
        lo, hi = _pair_key(a, b)
        self._edges[(lo, hi, relation)] = float(weight)
        return WeightedEdge(lo, hi, relation, float(weight))

    def add_perturbation_edge(self, a: str, b: str, relation: Relation = Relation.PERTURBATION) -> WeightedEdge:
        """Perturbation-record edge; weight is forced to exactly 1.0."""
        return self.add_edge(a, b, relation, 1.0)

    def build_similarity_edges(
        self, kind: NodeKind, threshold: float = 0.8, keep_fraction: float = 0.005
    ) -> int:
        """Add intra-kind cosine-similarity edges.

        Candidates are pairs with cosine >= threshold; of those, only the top
        ceil(keep_fraction * total-pair-count) by similarity survive (both
        filters apply). Ties break by lexicographic id pair so builds are
        deterministic. Nodes with zero-norm features cannot define a cosine
        and are skipped. Returns the number of edges added.
        """
        self._check_mutable()
        recs = [r for r in self._nodes.values() if r.kind is kind and r.modality_dim > 0]
        dims = {r.modality_dim for r in recs}
        if len(dims) > 1:
            raise MixedDimensionsError(
                f"{kind.value} nodes have mixed feature dimensions {sorted(dims)}"
            )
        n = len(recs)
        if n < 2:
            return 0
        feats = np.stack([r.features.astype(np.float64) for r in recs])
        norms = np.linalg.norm(feats, axis=1)
        ok = norms > 0
        unit = np.zeros_like(feats)
        unit[ok] = feats[ok] / norms[ok, None]
        sims = unit @ unit.T

        total_pairs = n * (n - 1) // 2
        keep = math.ceil(keep_fraction * total_pairs)
        candidates = []
        for i in range(n):
            if not ok[i]:
                continue
            for j in range(i + 1, n):
                if not ok[j]:
                    continue
                s = min(float(sims[i, j]), 1.0)
                if s >= 1.0 - 1e-12:
                    s = 1.0  # identical directions must yield exactly weight 1
                if s >= threshold:
                    candidates.append((-s, _pair_key(recs[i].id, recs[j].id), s))
        candidates.sort(key=lambda c: (c[0], c[1]))
        added = 0
        for _, (a, b), s in candidates[:keep]:
            if (a, b, Relation.SIMILARITY) in self._edges:
                continue
            self.add_edge(a, b, Relation.SIMILARITY, s)
            added += 1
        return added

    def merge_gene_morphology(self, gene_id: str, morph_id: str) -> str:
        """Fold a perturbation-linked morphology node into a featureless gene node.

        The gene node takes over the morphology feature vector; edges of both
        originals re-attach to the gene id, duplicates collapsing to the max
        weight. The edge(s) between the two originals disappear.
        """
        self._check_mutable()
        gene = self.node(gene_id)
        morph = self.node(morph_id)
        if gene.kind is not NodeKind.GENE:
            raise IncompatibleMergeError(f"{gene_id!r} is not a gene node")
        if morph.kind is not NodeKind.CELL_MORPHOLOGY:
            raise IncompatibleMergeError(f"{morph_id!r} is not a cell-morphology node")
        if gene.modality_dim != 0:
            raise IncompatibleMergeError(f"gene {gene_id!r} already carries features")
        pair = _pair_key(gene_id, morph_id)
        linked = any(
            k[:2] == pair and k[2] is Relation.PERTURBATION for k in self._edges
        )
        if not linked:
            raise IncompatibleMergeError(
                f"no genetic-perturbation record links {gene_id!r} and {morph_id!r}"
            )

        gene.features = morph.features.copy()
        moved = {}
        for (a, b, rel), w in list(self._edges.items()):
            if morph_id not in (a, b):
                continue
            del self._edges[(a, b, rel)]
            other = b if a == morph_id else a
            if other == gene_id:
                continue  # would become a self-loop
            lo, hi = _pair_key(gene_id, other)
            moved[(lo, hi, rel)] = max(w, moved.get((lo, hi, rel), 0.0))
        for key, w in moved.items():
            self._edges[key] = max(w, self._edges.get(key, 0.0))
        del self._nodes[morph_id]
        return gene_id

    def attach_gene_expression_node(
        self,
        molecule_id: str,
        profile,
        top_fraction: float = 0.01,
        gene_ids: Optional[Sequence[str]] = None,
    ) -> str:
        """Summarize a differential-expression profile as a new node.

        The profile is min-max scaled over its own entries and attached to the
        molecule by a weight-1 perturbation edge. The top ``top_fraction``
        entries by absolute raw value additionally create gene-molecule edges,
        for indices whose gene id (from ``gene_ids``) exists in the graph.
        Zero entries never create links. Default fraction 0.01; the sources
        this models report both a 1% and a 5% rule, so it stays a parameter.
        """
        self._check_mutable()
        mol = self.node(molecule_id)
        profile = np.asarray(profile, dtype=np.float64)
        if profile.ndim != 1 or not np.all(np.isfinite(profile)):
            raise ValueError("profile must be a finite 1-D vector")

        base = f"{molecule_id}.gexp"
        node_id = base
        suffix = 1
        while node_id in self._nodes:
            suffix += 1
            node_id = f"{base}{suffix}"
        # scale over the vector's own entries
        lo, hi = profile.min(), profile.max()
        scaled = (profile - lo) / (hi - lo) if hi > lo else np.zeros_like(profile)
        self.add_node(
            NodeRecord(node_id, NodeKind.GENE_EXPRESSION, scaled.astype(np.float32),
                       source_tag=mol.source_tag)
        )
        self.add_perturbation_edge(molecule_id, node_id)

        k = math.ceil(top_fraction * len(profile))
        order = sorted(range(len(profile)), key=lambda i: (-abs(profile[i]), i))
        for idx in order[:k]:
            if profile[idx] == 0.0:
                break  # sorted by |value|; the rest are zeros too
            gid = gene_ids[idx] if gene_ids is not None else None
            if gid is not None and gid in self._nodes and gid != molecule_id:
                self._edges.setdefault(
                    _pair_key(molecule_id, gid) + (Relation.GENE_MOLECULE,), 1.0
                )
        return node_id

    # --- finalize --------------------------------------------------------

    def finalize(self) -> "ContextGraph":
        """Freeze the graph: validate invariants, build adjacency, compute stats.

        Idempotent; all mutating operations raise FinalizedError afterwards.
        """
        if self._finalized:
            return self
        for rec in self._nodes.values():
            f = rec.features
            if len(f) and (f.min() < 0.0 or f.max() > 1.0):
                raise ValueError(f"node {rec.id!r} has features outside [0, 1]")
        adjacency: Dict[str, Dict[str, float]] = {nid: {} for nid in self._nodes}
        for (a, b, _rel), w in self._edges.items():
            if not (0.0 < w <= 1.0):
                raise ValueError(f"edge ({a}, {b}) weight {w} outside (0, 1]")
            adjacency[a][b] = max(w, adjacency[a].get(b, 0.0))
            adjacency[b][a] = max(w, adjacency[b].get(a, 0.0))
        self._adjacency = {
            nid: sorted(nbrs.items()) for nid, nbrs in adjacency.items()
        }
        node_counts: Dict[str, int] = {}
        for rec in self._nodes.values():
            node_counts[rec.kind.value] = node_counts.get(rec.kind.value, 0) + 1
        edge_counts: Dict[str, int] = {}
        for (_a, _b, rel) in self._edges:
            edge_counts[rel.value] = edge_counts.get(rel.value, 0) + 1
        self._stats = {
            "nodes": len(self._nodes),
            "edges": len(self._edges),
            "nodes_by_kind": node_counts,
            "edges_by_relation": edge_counts,
        }
        self._finalized = True
        return self

    def checksum(self) -> str:
        """Content hash over node ids/kinds and the edge set (not features)."""
        import hashlib

        h = hashlib.sha256()
        for nid, rec in sorted(self._nodes.items()):
            h.update(f"{nid}:{rec.kind.value}:{rec.modality_dim};".encode("utf-8"))
        for (a, b, rel), w in sorted(self._edges.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)):
            h.update(f"{a}-{b}:{rel.value}:{w!r};".encode("utf-8"))
        return h.hexdigest()

    def stats(self) -> dict:
        if not self._finalized:
            raise FinalizedError("stats available after finalize()")
        return dict(self._stats)

    # --- persistence -----------------------------------------------------

    def save(self, path) -> None:
        if not self._finalized:
            raise FinalizedError("only finalized graphs are saved")
        nodes_meta = []
        feature_blobs = []
        for rec in self._nodes.values():
            nodes_meta.append(
                {
                    "id": rec.id,
                    "kind": rec.kind.value,
                    "source_tag": rec.source_tag,
                    "smiles": rec.smiles,
                    "dim": rec.modality_dim,
                }
            )
            feature_blobs.append(rec.features)
        edges_meta = [
            [a, b, rel.value, w]
            for (a, b, rel), w in sorted(
                self._edges.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value)
            )
        ]
        flat = (
            np.concatenate(feature_blobs).astype("<f4")
            if feature_blobs and sum(len(f) for f in feature_blobs)
            else np.zeros(0, dtype="<f4")
        )
        meta = {"nodes": nodes_meta, "edges": edges_meta, "stats": self._stats}
        serialize.write_container(path, MAGIC, meta, [flat])

    @classmethod
    def load(cls, path) -> "ContextGraph":
        meta, arrays = serialize.read_container(path, MAGIC)
        flat = arrays[0].astype(np.float32)
        g = cls()
        offset = 0
        for nm in meta["nodes"]:
            dim = nm["dim"]
            feats = flat[offset : offset + dim]
            offset += dim
            g.add_node(
                NodeRecord(
                    nm["id"], NodeKind(nm["kind"]), feats,
                    source_tag=nm["source_tag"], smiles=nm["smiles"],
                )
            )
        for a, b, rel, w in meta["edges"]:
            g._edges[(a, b, Relation(rel))] = float(w)
        return g.finalize()


# --- TSV ingestion ---------------------------------------------------------

def load_node_table(path, fp_radius: int = 2, fp_bits: int = 1024) -> List[NodeRecord]:
    """Parse a node TSV: id, kind, source_tag, then features.

    Molecule rows carry a SMILES column instead of inline features; the
    fingerprint is computed here. Non-molecule features are min-max scaled
    per (kind, dimension) group before the records are returned.
    """
    raw: List[Tuple[int, str, NodeKind, str, object]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 4:
                raise TableFormatError(f"{path}:{lineno}: expected >= 4 columns, got {len(cols)}")
            nid, kind_name, tag = cols[0], cols[1], cols[2]
            try:
                kind = NodeKind(kind_name)
            except ValueError:
                raise TableFormatError(f"{path}:{lineno}: unknown node kind {kind_name!r}") from None
            if kind is NodeKind.MOLECULE:
                raw.append((lineno, nid, kind, tag, cols[3]))
            else:
                try:
                    feats = np.array([float(c) for c in cols[3:]], dtype=np.float64)
                except ValueError:
                    raise TableFormatError(f"{path}:{lineno}: malformed feature value") from None
                raw.append((lineno, nid, kind, tag, feats))

    # group non-molecule rows by (kind, dim) and scale per dimension
    groups: Dict[Tuple[NodeKind, int], List[int]] = {}
    for i, (_ln, _nid, kind, _tag, payload) in enumerate(raw):
        if kind is not NodeKind.MOLECULE:
            groups.setdefault((kind, len(payload)), []).append(i)
    scaled: Dict[int, np.ndarray] = {}
    for (_kind, _dim), idxs in groups.items():
        mat = min_max_scale(np.stack([raw[i][4] for i in idxs]))
        for row, i in enumerate(idxs):
            scaled[i] = mat[row]

    records = []
    for i, (lineno, nid, kind, tag, payload) in enumerate(raw):
        if kind is NodeKind.MOLECULE:
            try:
                mol = parse_smiles(payload)
            except Exception as exc:
                raise TableFormatError(f"{path}:{lineno}: bad SMILES: {exc}") from exc
            fp = morgan_fingerprint(mol, fp_radius, fp_bits)
            records.append(NodeRecord(nid, kind, fp.to_float(), tag, smiles=payload, mol=mol))
        else:
            records.append(NodeRecord(nid, kind, scaled[i].astype(np.float32), tag))
    return records


def load_edge_table(path) -> List[Tuple[str, str, Relation, float]]:
    """Parse an edge TSV: src_id, dst_id, relation, weight.

    The weight column is ignored and forced to 1.0 for perturbation rows.
    """
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise TableFormatError(f"{path}:{lineno}: expected 4 columns, got {len(cols)}")
            src, dst, rel_name, w_str = cols
            try:
                rel = Relation(rel_name)
            except ValueError:
                raise TableFormatError(f"{path}:{lineno}: unknown relation {rel_name!r}") from None
            try:
                w = float(w_str)
            except ValueError:
                raise TableFormatError(f"{path}:{lineno}: malformed weight {w_str!r}") from None
            if rel is Relation.PERTURBATION:
                w = 1.0
            out.append((src, dst, rel, w))
    return out


def build_graph_from_tables(
    node_path,
    edge_path,
    fp_radius: int = 2,
    fp_bits: int = 1024,
    similarity_kinds: Sequence[NodeKind] = (),
    threshold: float = 0.8,
    keep_fraction: float = 0.005,
) -> ContextGraph:
    g = ContextGraph()
    for rec in load_node_table(node_path, fp_radius, fp_bits):
        g.add_node(rec)
    for src, dst, rel, w in load_edge_table(edge_path):
        g.add_edge(src, dst, rel, w)
    for kind in similarity_kinds:
        g.build_similarity_edges(kind, threshold, keep_fraction)
    return g.finalize()
