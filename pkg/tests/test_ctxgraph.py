"""Context-graph tests: construction rules, the brute-force similarity-edge
oracle, merging, persistence, and TSV ingestion."""

import math

import numpy as np
import pytest

from infoalign.ctxgraph import (
    ContextGraph,
    NodeKind,
    NodeRecord,
    Relation,
    build_graph_from_tables,
    load_edge_table,
    load_node_table,
    min_max_scale,
)
from infoalign.errors import (
    CorruptFileError,
    DuplicateIdError,
    FinalizedError,
    IncompatibleMergeError,
    MixedDimensionsError,
    SelfLoopError,
    TableFormatError,
    UnknownNodeError,
)


def rec(nid, kind=NodeKind.CELL_MORPHOLOGY, feats=(0.5,)):
    return NodeRecord(nid, kind, np.array(feats, dtype=np.float32))


def mol(nid, smiles="CCO"):
    return NodeRecord(nid, NodeKind.MOLECULE, np.zeros(0, dtype=np.float32), smiles=smiles)


# --- nodes/edges ---------------------------------------------------------------

def test_add_nodes():
    g = ContextGraph()
    g.add_node(rec("a"))
    g.add_node(rec("b"))
    assert g.num_nodes() == 2
    with pytest.raises(DuplicateIdError):
        g.add_node(rec("a"))


def test_finalized_rejects_mutation():
    g = ContextGraph()
    g.add_node(rec("a"))
    g.finalize()
    with pytest.raises(FinalizedError):
        g.add_node(rec("b"))
    with pytest.raises(FinalizedError):
        g.add_edge("a", "a", Relation.SIMILARITY, 0.9)
    # idempotent
    assert g.finalize() is g


def test_molecule_node_parses_smiles():
    g = ContextGraph()
    g.add_node(mol("m1", "c1ccccc1"))
    assert g.node("m1").mol is not None
    assert len(g.node("m1").mol.atoms) == 6


def test_perturbation_edge_weight_forced_one():
    g = ContextGraph()
    g.add_node(rec("a"))
    g.add_node(rec("b"))
    e = g.add_perturbation_edge("a", "b")
    assert e.weight == 1.0
    with pytest.raises(SelfLoopError):
        g.add_perturbation_edge("a", "a")
    with pytest.raises(UnknownNodeError):
        g.add_perturbation_edge("a", "nope")


def test_edge_weight_range():
    g = ContextGraph()
    g.add_node(rec("a"))
    g.add_node(rec("b"))
    with pytest.raises(ValueError):
        g.add_edge("a", "b", Relation.SIMILARITY, 0.0)
    with pytest.raises(ValueError):
        g.add_edge("a", "b", Relation.SIMILARITY, 1.5)


def test_undirected_neighbors_same_weight():
    g = ContextGraph()
    g.add_node(rec("a"))
    g.add_node(rec("b"))
    g.add_edge("a", "b", Relation.SIMILARITY, 0.9)
    g.finalize()
    assert g.neighbors("a") == [("b", 0.9)]
    assert g.neighbors("b") == [("a", 0.9)]


def test_max_weight_effective_edge():
    """A pair linked by two relations shows one effective max-weight edge."""
    g = ContextGraph()
    g.add_node(rec("a"))
    g.add_node(rec("b"))
    g.add_edge("a", "b", Relation.SIMILARITY, 0.85)
    g.add_perturbation_edge("a", "b")
    g.finalize()
    assert g.num_edges() == 2           # both relations stored
    assert g.neighbors("a") == [("b", 1.0)]  # walker sees max weight


# --- min-max scaling -----------------------------------------------------------

def test_min_max_closed_form():
    out = min_max_scale(np.array([[2.0], [4.0], [6.0]]))
    assert np.allclose(out[:, 0], [0.0, 0.5, 1.0])


def test_min_max_constant_column():
    out = min_max_scale(np.array([[5.0, 1.0], [5.0, 3.0]]))
    assert np.allclose(out[:, 0], 0.0)
    assert np.allclose(out[:, 1], [0.0, 1.0])


def test_min_max_random_against_one_pass_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((5, 3))
    out = min_max_scale(x)
    for j in range(3):
        lo, hi = x[:, j].min(), x[:, j].max()
        expect = (x[:, j] - lo) / (hi - lo)
        assert np.allclose(out[:, j], expect, atol=1e-12)
        assert out[:, j].min() == pytest.approx(0.0) and out[:, j].max() == pytest.approx(1.0)


# --- similarity edges -----------------------------------------------------------

def brute_force_similarity(recs, threshold, keep_fraction):
    """Independent O(n^2) oracle: threshold then global top-k, id tie-break."""
    n = len(recs)
    total_pairs = n * (n - 1) // 2
    cands = []
    for i in range(n):
        fi = recs[i].features.astype(np.float64)
        ni = np.linalg.norm(fi)
        if ni == 0:
            continue
        for j in range(i + 1, n):
            fj = recs[j].features.astype(np.float64)
            nj = np.linalg.norm(fj)
            if nj == 0:
                continue
            s = min(float(fi @ fj / (ni * nj)), 1.0)
            if s >= 1.0 - 1e-12:
                s = 1.0
            if s >= threshold:
                a, b = sorted((recs[i].id, recs[j].id))
                cands.append((s, a, b))
    cands.sort(key=lambda c: (-c[0], c[1], c[2]))
    keep = math.ceil(keep_fraction * total_pairs)
    return {(a, b): s for s, a, b in cands[:keep]}


def test_identical_vectors_edge_weight_one():
    g = ContextGraph()
    g.add_node(rec("a", feats=(0.5, 0.5)))
    g.add_node(rec("b", feats=(1.0, 1.0)))
    added = g.build_similarity_edges(NodeKind.CELL_MORPHOLOGY, keep_fraction=1.0)
    assert added == 1
    g.finalize()
    assert g.neighbors("a") == [("b", 1.0)]


def test_below_threshold_no_edge():
    g = ContextGraph()
    g.add_node(rec("a", feats=(1.0, 0.0)))
    g.add_node(rec("b", feats=(1.0, 1.0)))  # cosine ~ 0.707 < 0.8
    assert g.build_similarity_edges(NodeKind.CELL_MORPHOLOGY, keep_fraction=1.0) == 0


def test_mixed_dimensions_rejected():
    g = ContextGraph()
    g.add_node(rec("a", feats=(1.0, 0.0)))
    g.add_node(rec("b", feats=(1.0, 0.0, 0.0)))
    with pytest.raises(MixedDimensionsError):
        g.build_similarity_edges(NodeKind.CELL_MORPHOLOGY)


@pytest.mark.parametrize("seed", range(10))
def test_similarity_matches_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 50
    g = ContextGraph()
    recs = []
    for i in range(n):
        # correlated features so the 0.8 threshold has plenty of hits
        base = rng.uniform(0.2, 0.8, size=8)
        f = np.clip(base + 0.15 * rng.standard_normal(8), 0.0, 1.0)
        r = rec(f"n{i:03d}", feats=f)
        recs.append(r)
        g.add_node(r)
    keep_fraction = rng.choice([0.005, 0.02, 0.1, 1.0])
    expected = brute_force_similarity(recs, 0.8, keep_fraction)
    g.build_similarity_edges(NodeKind.CELL_MORPHOLOGY, 0.8, keep_fraction)
    got = {(a, b): w for (a, b, r), w in
           ((k, v) for k, v in g._edges.items()) if r is Relation.SIMILARITY}
    assert set(got) == set(expected)
    for k in got:
        assert got[k] == pytest.approx(expected[k], abs=1e-12)


def test_zero_norm_rows_skipped():
    g = ContextGraph()
    g.add_node(rec("a", feats=(0.0, 0.0)))
    g.add_node(rec("b", feats=(1.0, 0.0)))
    g.add_node(rec("c", feats=(1.0, 0.0)))
    assert g.build_similarity_edges(NodeKind.CELL_MORPHOLOGY, keep_fraction=1.0) == 1


# --- merge ----------------------------------------------------------------------

def make_merge_graph():
    g = ContextGraph()
    g.add_node(NodeRecord("gene1", NodeKind.GENE, np.zeros(0, dtype=np.float32)))
    g.add_node(rec("morph1", feats=(0.1, 0.9)))
    g.add_node(rec("other", feats=(0.5, 0.5)))
    g.add_perturbation_edge("gene1", "morph1")
    return g


def test_merge_gene_morphology():
    g = make_merge_graph()
    g.add_edge("morph1", "other", Relation.SIMILARITY, 0.9)
    before = g.num_nodes()
    g.merge_gene_morphology("gene1", "morph1")
    assert g.num_nodes() == before - 1
    assert not g.has_node("morph1")
    gene = g.node("gene1")
    assert gene.kind is NodeKind.GENE
    assert np.allclose(gene.features, [0.1, 0.9])
    # re-attached edge
    assert (min("gene1", "other"), max("gene1", "other"), Relation.SIMILARITY) in g._edges


def test_merge_max_weight_collapse():
    g = make_merge_graph()
    g.add_edge("gene1", "other", Relation.SIMILARITY, 0.5)
    g.add_edge("morph1", "other", Relation.SIMILARITY, 0.9)
    g.merge_gene_morphology("gene1", "morph1")
    key = (min("gene1", "other"), max("gene1", "other"), Relation.SIMILARITY)
    assert g._edges[key] == pytest.approx(0.9)


def test_merge_errors():
    g = make_merge_graph()
    with pytest.raises(UnknownNodeError):
        g.merge_gene_morphology("gene1", "nope")
    with pytest.raises(IncompatibleMergeError):
        g.merge_gene_morphology("other", "morph1")   # not a gene
    g2 = ContextGraph()
    g2.add_node(NodeRecord("g", NodeKind.GENE, np.zeros(0, dtype=np.float32)))
    g2.add_node(rec("m"))
    with pytest.raises(IncompatibleMergeError):
        g2.merge_gene_morphology("g", "m")  # no perturbation link


# --- gene-expression attachment ---------------------------------------------------

def test_attach_gene_expression_basic():
    g = ContextGraph()
    g.add_node(mol("m1"))
    profile = np.arange(10.0)
    nid = g.attach_gene_expression_node("m1", profile)
    assert nid == "m1.gexp"
    node = g.node(nid)
    assert node.kind is NodeKind.GENE_EXPRESSION
    assert node.features.min() == 0.0 and node.features.max() == 1.0
    assert (min("m1", nid), max("m1", nid), Relation.PERTURBATION) in g._edges


def test_attach_top_fraction_link_count():
    """978-length profile, fraction 0.01 -> ceil(9.78) = 10 candidate links."""
    g = ContextGraph()
    g.add_node(mol("m1"))
    rng = np.random.default_rng(5)
    gene_ids = [f"g{i:03d}" for i in range(978)]
    for gid in gene_ids:
        g.add_node(NodeRecord(gid, NodeKind.GENE, np.zeros(0, dtype=np.float32)))
    profile = rng.standard_normal(978)
    g.attach_gene_expression_node("m1", profile, top_fraction=0.01, gene_ids=gene_ids)
    gm = [k for k in g._edges if k[2] is Relation.GENE_MOLECULE]
    assert len(gm) == 10
    # sort oracle: the linked genes are the 10 largest |profile| entries
    top = sorted(range(978), key=lambda i: (-abs(profile[i]), i))[:10]
    expect = {tuple(sorted(("m1", gene_ids[i]))) + (Relation.GENE_MOLECULE,) for i in top}
    assert set(gm) == expect


def test_attach_zero_profile_no_links():
    g = ContextGraph()
    g.add_node(mol("m1"))
    g.add_node(NodeRecord("g000", NodeKind.GENE, np.zeros(0, dtype=np.float32)))
    g.attach_gene_expression_node("m1", np.zeros(20), top_fraction=0.5,
                                  gene_ids=["g000"] * 20)
    assert not [k for k in g._edges if k[2] is Relation.GENE_MOLECULE]


def test_attach_unknown_molecule():
    g = ContextGraph()
    with pytest.raises(UnknownNodeError):
        g.attach_gene_expression_node("nope", np.ones(5))


# --- finalize / stats / persistence ------------------------------------------------

def build_random_graph(seed=0, n=30):
    rng = np.random.default_rng(seed)
    g = ContextGraph()
    for i in range(n):
        g.add_node(mol(f"m{i:02d}", "CCO"))
        g.add_node(rec(f"c{i:02d}", feats=tuple(rng.uniform(0, 1, 4))))
        g.add_perturbation_edge(f"m{i:02d}", f"c{i:02d}")
    g.build_similarity_edges(NodeKind.CELL_MORPHOLOGY, 0.8, 0.1)
    return g.finalize()


def test_stats_counts():
    g = build_random_graph()
    s = g.stats()
    assert s["nodes_by_kind"]["molecule"] == 30
    assert s["nodes_by_kind"]["cell_morphology"] == 30
    assert s["edges_by_relation"]["perturbation"] == 30
    assert s["nodes"] == g.num_nodes() and s["edges"] == g.num_edges()


def test_finalize_validates_ranges():
    g = ContextGraph()
    g.add_node(NodeRecord("bad", NodeKind.CELL_MORPHOLOGY,
                          np.array([1.5], dtype=np.float32)))
    with pytest.raises(ValueError):
        g.finalize()


def test_save_load_round_trip(tmp_path):
    g = build_random_graph(seed=1)
    p = tmp_path / "g.ctxg"
    g.save(p)
    g2 = ContextGraph.load(p)
    assert g2.node_ids() == g.node_ids()
    assert g2.checksum() == g.checksum()
    for nid in g.node_ids():
        assert np.array_equal(g2.node(nid).features, g.node(nid).features)
    # byte-identical re-serialization
    p2 = tmp_path / "g2.ctxg"
    g2.save(p2)
    assert p.read_bytes() == p2.read_bytes()


def test_load_corrupt(tmp_path):
    g = build_random_graph()
    p = tmp_path / "g.ctxg"
    g.save(p)
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptFileError):
        ContextGraph.load(p)


# --- TSV tables ---------------------------------------------------------------------

def write_tables(tmp_path):
    nodes = tmp_path / "nodes.tsv"
    edges = tmp_path / "edges.tsv"
    nodes.write_text(
        "# comment\n"
        "m1\tmolecule\tsrc\tCCO\n"
        "m2\tmolecule\tsrc\tc1ccccc1\n"
        "c1\tcell_morphology\tsrc\t1.0\t5.0\n"
        "c2\tcell_morphology\tsrc\t3.0\t5.0\n"
        "c3\tcell_morphology\tsrc\t2.0\t9.0\n"
    )
    edges.write_text(
        "m1\tc1\tperturbation\t0.25\n"
        "m2\tc2\tperturbation\t1.0\n"
        "m2\tc3\tsimilarity\t0.9\n"
        "m1\tm2\tgene_molecule\t0.5\n"
    )
    return nodes, edges


def test_load_node_table_scaling(tmp_path):
    nodes, _ = write_tables(tmp_path)
    recs = {r.id: r for r in load_node_table(nodes)}
    assert recs["m1"].mol is not None
    assert recs["m1"].features.sum() > 0  # fingerprint bits
    # min-max over the cell_morphology group: col0 [1,3,2] -> [0,1,0.5]; col1 [5,5,9] -> [0,0,1]
    assert np.allclose(recs["c1"].features, [0.0, 0.0])
    assert np.allclose(recs["c2"].features, [1.0, 0.0])
    assert np.allclose(recs["c3"].features, [0.5, 1.0])


def test_load_edge_table_perturbation_forced(tmp_path):
    _, edges = write_tables(tmp_path)
    rows = load_edge_table(edges)
    assert rows[0] == ("m1", "c1", Relation.PERTURBATION, 1.0)  # 0.25 overridden
    assert rows[2][2] is Relation.SIMILARITY and rows[2][3] == 0.9


def test_build_graph_from_tables(tmp_path):
    nodes, edges = write_tables(tmp_path)
    g = build_graph_from_tables(nodes, edges)
    assert g.finalized
    assert g.stats()["nodes"] == 5 and g.stats()["edges"] == 4


@pytest.mark.parametrize("line,msg", [
    ("x1\tbogus_kind\tsrc\t1.0", "kind"),
    ("x1\tcell_morphology\tsrc\tnot_a_number", "feature"),
    ("x1\tcell_morphology", "columns"),
])
def test_node_table_errors_name_line(tmp_path, line, msg):
    p = tmp_path / "nodes.tsv"
    p.write_text("ok\tcell_morphology\tsrc\t1.0\n" + line + "\n")
    with pytest.raises(TableFormatError, match=":2"):
        load_node_table(p)


def test_edge_table_errors_name_line(tmp_path):
    p = tmp_path / "edges.tsv"
    p.write_text("a\tb\tperturbation\t1.0\na\tb\tsimilarity\toops\n")
    with pytest.raises(TableFormatError, match=":2"):
        load_edge_table(p)
    p.write_text("a\tb\tnot_a_relation\t1.0\n")
    with pytest.raises(TableFormatError, match=":1"):
        load_edge_table(p)
