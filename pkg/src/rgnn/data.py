"""Dataset ingestion, the canonical on-disk format and split generation.

Canonical layout of a dataset directory::

    meta.json     {name, num_nodes, num_edges, num_features, num_classes, class_names}
    edges.tsv     one undirected edge per line, "src<TAB>dst" with src < dst
    features.bin  N x d little-endian float32, row-major (features.tsv also accepted)
    labels.tsv    "node_id<TAB>label_id", one line per node
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import Graph, from_edges, largest_connected_component
from .training import Split

logger = logging.getLogger(__name__)

# name: (classes, features, nodes, edges)
REFERENCE_COUNTS = {
    "cora": (7, 1433, 2485, 5069),
    "citeseer": (6, 3703, 2120, 3679),
    "pubmed": (3, 500, 19717, 44324),
    "cornell": (5, 1703, 183, 295),
    "texas": (5, 1703, 183, 309),
    "wisconsin": (5, 1703, 251, 499),
}


class IngestError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(eq=False)
class Dataset:
    name: str
    graph: Graph
    class_names: list[str]

    def meta(self) -> dict:
        g = self.graph
        return {
            "name": self.name,
            "num_nodes": g.n,
            "num_edges": g.num_edges,
            "num_features": g.num_features,
            "num_classes": g.k,
            "class_names": list(self.class_names),
        }


# ------------------------------------------------------------------ helpers


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                yield lineno, line


def _edge_index(pairs, index: dict, path) -> np.ndarray:
    edges, dropped = [], 0
    for a, b in pairs:
        if a in index and b in index:
            edges.append((index[a], index[b]))
        else:
            dropped += 1
    if dropped:
        logger.warning("%s: dropped %d edges with unknown node ids", path, dropped)
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def _assemble(name, ids, feats, raw_labels, edges, lcc: bool) -> Dataset:
    class_names = sorted(set(raw_labels))
    code = {c: i for i, c in enumerate(class_names)}
    labels = np.array([code[c] for c in raw_labels], dtype=np.int64)
    g = from_edges(len(ids), edges, np.asarray(feats, dtype=np.float64), labels, max(len(class_names), 2))
    if lcc:
        g, _ = largest_connected_component(g)
    return Dataset(name, g, class_names)


# ---------------------------------------------------------------- ingestion


def ingest_content_cites(content_path, cites_path, name: str = "", lcc: bool = True) -> Dataset:
    """Cora/Citeseer style: ``<id> <binary features...> <label>`` and ``<cited> <citing>``."""
    ids, feats, labels, index = [], [], [], {}
    d = None
    for lineno, line in _lines(content_path):
        tok = line.split()
        if len(tok) < 3:
            raise IngestError(f"{content_path}:{lineno}: expected id<TAB>features<TAB>label")
        try:
            row = [float(t) for t in tok[1:-1]]
        except ValueError:
            raise IngestError(f"{content_path}:{lineno}: non-numeric feature") from None
        if d is None:
            d = len(row)
        elif len(row) != d:
            raise IngestError(f"{content_path}:{lineno}: expected {d} features, got {len(row)}")
        if tok[0] in index:
            raise IngestError(f"{content_path}:{lineno}: duplicate node id {tok[0]}")
        index[tok[0]] = len(ids)
        ids.append(tok[0])
        feats.append(row)
        labels.append(tok[-1])
    pairs = []
    for lineno, line in _lines(cites_path):
        tok = line.split()
        if len(tok) != 2:
            raise IngestError(f"{cites_path}:{lineno}: expected two node ids")
        pairs.append((tok[0], tok[1]))
    edges = _edge_index(pairs, index, cites_path)
    return _assemble(name or Path(content_path).stem, ids, feats, labels, edges, lcc)


def _parse_webkb_features(raw: list[list[int]], encoding: str, d: int | None) -> np.ndarray:
    if encoding == "auto":
        lengths = {len(r) for r in raw}
        binary = all(v in (0, 1) for r in raw for v in r)
        encoding = "dense" if len(lengths) == 1 and binary and lengths.pop() > 2 else "indices"
    if encoding == "dense":
        return np.array(raw, dtype=np.float64)
    if encoding != "indices":
        raise IngestError(f"unknown feature encoding {encoding!r}")
    width = d if d is not None else 1 + max((max(r) for r in raw if r), default=0)
    x = np.zeros((len(raw), width))
    for i, r in enumerate(raw):
        x[i, r] = 1.0
    return x


def ingest_webkb(edges_path, node_path, name: str = "", encoding: str = "auto",
                 num_features: int | None = None) -> Dataset:
    """WebKB style: ``id<TAB>f,f,...<TAB>label`` nodes and ``src<TAB>dst`` hyperlinks.

    The feature column is either a list of active bag-of-words positions
    (``encoding="indices"``) or a dense 0/1 vector (``"dense"``); ``"auto"``
    picks dense when every row is an equal-length 0/1 list.
    """
    ids, raw, labels, index = [], [], [], {}
    for lineno, line in _lines(node_path):
        tok = line.split("\t")
        if len(tok) != 3:
            raise IngestError(f"{node_path}:{lineno}: expected id<TAB>features<TAB>label")
        if lineno == 1 and not tok[0].strip().lstrip("-").isdigit():
            continue  # header
        try:
            row = [int(v) for v in tok[1].split(",") if v.strip()]
        except ValueError:
            raise IngestError(f"{node_path}:{lineno}: malformed feature list") from None
        key = tok[0].strip()
        if key in index:
            raise IngestError(f"{node_path}:{lineno}: duplicate node id {key}")
        index[key] = len(ids)
        ids.append(key)
        raw.append(row)
        labels.append(tok[2].strip())
    feats = _parse_webkb_features(raw, encoding, num_features)
    pairs = []
    for lineno, line in _lines(edges_path):
        tok = line.split()
        if len(tok) != 2:
            raise IngestError(f"{edges_path}:{lineno}: expected two node ids")
        if lineno == 1 and not tok[0].lstrip("-").isdigit():
            continue
        pairs.append((tok[0], tok[1]))
    edges = _edge_index(pairs, index, edges_path)
    return _assemble(name or Path(node_path).parent.name, ids, feats, labels, edges, lcc=False)


def ingest_pubmed(node_path, cites_path, name: str = "pubmed", lcc: bool = True) -> Dataset:
    """Pubmed-Diabetes ``.NODE.paper.tab`` / ``.DIRECTED.cites.tab`` files."""
    feature_index: dict[str, int] = {}
    ids, rows, labels, index = [], [], [], {}
    for lineno, line in _lines(node_path):
        tok = line.split("\t")
        if lineno == 1 and tok[0] == "NODE":
            continue
        if any(t.startswith("numeric:") for t in tok):
            for t in tok:
                if t.startswith("numeric:"):
                    feature_index.setdefault(t.split(":")[1], len(feature_index))
            continue
        if len(tok) < 2:
            raise IngestError(f"{node_path}:{lineno}: expected id and label")
        entries, label = [], None
        for t in tok[1:]:
            key, sep, val = t.partition("=")
            if not sep:
                raise IngestError(f"{node_path}:{lineno}: malformed attribute {t!r}")
            if key == "label":
                label = val
            elif key != "summary":
                if key not in feature_index:
                    feature_index[key] = len(feature_index)
                try:
                    entries.append((feature_index[key], float(val)))
                except ValueError:
                    raise IngestError(f"{node_path}:{lineno}: non-numeric value for {key}") from None
        if label is None:
            raise IngestError(f"{node_path}:{lineno}: missing label")
        index[tok[0]] = len(ids)
        ids.append(tok[0])
        rows.append(entries)
        labels.append(label)
    x = np.zeros((len(ids), len(feature_index)))
    for i, entries in enumerate(rows):
        for j, v in entries:
            x[i, j] = v
    pairs = []
    for lineno, line in _lines(cites_path):
        tok = line.split("\t")
        if "|" not in tok:
            continue  # header lines
        if len(tok) != 4 or tok[2] != "|":
            raise IngestError(f"{cites_path}:{lineno}: expected 'id<TAB>paper:a<TAB>|<TAB>paper:b'")
        pairs.append((tok[1].split(":", 1)[-1], tok[3].split(":", 1)[-1]))
    edges = _edge_index(pairs, index, cites_path)
    return _assemble(name, ids, x, labels, edges, lcc)


# ----------------------------------------------------------------- canonical


def save_dataset(ds: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = ds.graph
    (out / "meta.json").write_text(json.dumps(ds.meta(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    upper = g.adjacency.tocoo()
    keep = upper.row < upper.col
    e = np.stack([upper.row[keep], upper.col[keep]], axis=1)
    e = e[np.lexsort((e[:, 1], e[:, 0]))]
    with open(out / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{a}\t{b}\n" for a, b in e)
    g.features.astype("<f4").tofile(out / "features.bin")
    with open(out / "labels.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{i}\t{c}\n" for i, c in enumerate(g.labels))
    return out


def read_canonical(path) -> tuple[dict, np.ndarray, np.ndarray, np.ndarray]:
    """Raw canonical contents: meta, edges (E x 2), features, labels."""
    p = Path(path)
    meta = json.loads((p / "meta.json").read_text(encoding="utf-8"))
    edges = np.loadtxt(p / "edges.tsv", dtype=np.int64, ndmin=2).reshape(-1, 2)
    lab = np.loadtxt(p / "labels.tsv", dtype=np.int64, ndmin=2).reshape(-1, 2)
    labels = np.full(lab[:, 0].max() + 1 if lab.size else 0, -1, dtype=np.int64)
    labels[lab[:, 0]] = lab[:, 1]
    n = labels.size
    if (p / "features.bin").exists():
        flat = np.fromfile(p / "features.bin", dtype="<f4").astype(np.float64)
        d = flat.size // n if n else 0
        if d * n != flat.size:
            raise IngestError(f"{p}/features.bin holds {flat.size} floats, not a multiple of {n} nodes")
        feats = flat.reshape(n, d)
    else:
        feats = np.loadtxt(p / "features.tsv", dtype=np.float64, ndmin=2)
    return meta, edges, feats, labels


def load_dataset(path) -> Dataset:
    meta, edges, feats, labels = read_canonical(path)
    n = labels.size
    if np.any(labels < 0):
        raise IngestError(f"{path}: labels.tsv does not cover every node")
    if edges.size and (edges.max() >= n or np.any(edges[:, 0] >= edges[:, 1])):
        raise IngestError(f"{path}: edges must satisfy src < dst < num_nodes")
    k = int(meta.get("num_classes", labels.max() + 1))
    g = from_edges(n, edges, feats, labels, k)
    return Dataset(meta.get("name", Path(path).name), g, list(meta.get("class_names", [])))


def row_normalize_features(g: Graph) -> Graph:
    """Scale each feature row to sum one (all-zero rows stay zero)."""
    s = g.features.sum(axis=1, keepdims=True)
    x = np.divide(g.features, s, out=np.zeros_like(g.features), where=s != 0)
    return Graph(g.adjacency, x, g.labels, g.k)


# -------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    protocol: str = "citation"
    train_per_class: int = 20
    val_per_class: int = 30
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.protocol not in ("citation", "fraction"):
            raise SplitError(f"unknown split protocol {self.protocol!r}")
        if not math.isclose(sum(self.fractions), 1.0, abs_tol=1e-9) or min(self.fractions) < 0:
            raise SplitError(f"split fractions must be non-negative and sum to 1, got {self.fractions}")


def make_split(labels, spec: SplitSpec, seed: int | np.random.SeedSequence) -> Split:
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    if spec.protocol == "citation":
        train, val = [], []
        need = spec.train_per_class + spec.val_per_class
        for c in np.unique(labels):
            members = np.flatnonzero(labels == c)
            if members.size < need:
                raise SplitError(f"class {c} has {members.size} nodes, fewer than the {need} required")
            perm = rng.permutation(members)
            train.append(perm[: spec.train_per_class])
            val.append(perm[spec.train_per_class:need])
        train, val = np.sort(np.concatenate(train)), np.sort(np.concatenate(val))
        rest = np.setdiff1d(np.arange(labels.size), np.concatenate([train, val]))
        return Split(train, val, rest)
    n = labels.size
    n_train = math.floor(spec.fractions[0] * n)
    n_val = math.floor(spec.fractions[1] * n)
    perm = rng.permutation(n)
    return Split(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]), np.sort(perm[n_train + n_val:]))


# --------------------------------------------------------------------- stats


def stats(path) -> dict:
    """Counts, class histogram and any mismatch against meta.json or the published reference counts."""
    meta, edges, feats, labels = read_canonical(path)
    k = int(labels.max() + 1) if labels.size else 0
    counts = {
        "num_nodes": int(labels.size),
        "num_edges": int(edges.shape[0]),
        "num_features": int(feats.shape[1]),
        "num_classes": k,
    }
    mismatches = []
    for key, actual in counts.items():
        if key in meta and meta[key] != actual:
            mismatches.append(f"meta.json {key}={meta[key]} but files contain {actual}")
    name = str(meta.get("name", Path(path).name)).lower()
    if name in REFERENCE_COUNTS:
        expected = dict(zip(("num_classes", "num_features", "num_nodes", "num_edges"), REFERENCE_COUNTS[name]))
        for key, want in expected.items():
            if counts[key] != want:
                mismatches.append(f"{key}={counts[key]} differs from reference {want}")
    return {
        "name": name,
        **counts,
        "class_histogram": np.bincount(labels, minlength=k).tolist(),
        "mismatches": mismatches,
    }


def format_stats(report: dict) -> str:
    lines = [
        f"dataset   {report['name']}",
        f"nodes     {report['num_nodes']}",
        f"edges     {report['num_edges']}",
        f"features  {report['num_features']}",
        f"classes   {report['num_classes']}",
        "histogram " + " ".join(str(c) for c in report["class_histogram"]),
    ]
    lines += [f"MISMATCH  {m}" for m in report["mismatches"]]
    return "\n".join(lines)
