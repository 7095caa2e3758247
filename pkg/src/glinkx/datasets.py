"""Dataset ingestion and binary bundles.

Raw text formats (UTF-8, ``#`` starts a comment line):

* edges:   one ``src<TAB>dst`` per line
* labels:  one ``node<TAB>label`` per line (labels are class ids)
* splits:  one file per split, lines ``node<TAB>{train|valid|test}``
* features: DMAT1 binary (row i = node i after id mapping) or text lines
  ``node<TAB>v1 v2 ...``

Node ids in raw files may be arbitrary tokens; ingestion maps them to dense
ids (numeric sort when every token is an integer, lexicographic otherwise).

A bundle directory holds DMAT1 matrices plus ``manifest.json`` recording
counts and sha256 checksums.  Integer payloads (edges, labels, splits) are
stored in DMAT1 too, which is exact for values below 2^24; ingestion
refuses larger graphs.
"""

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .dmat import MAGIC, read_dmat, write_dmat
from .errors import FormatError, IngestError
from .graph import LabelVector, SplitMasks, build_graph

_MAX_EXACT = 1 << 24
_ROLES = {"train": 0, "valid": 1, "test": 2}


def _lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def parse_edge_file(path):
    pairs = []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise IngestError(f"{path}:{lineno}: expected 'src<TAB>dst'",
                              line=lineno)
        pairs.append((parts[0], parts[1], lineno))
    return pairs


def parse_label_file(path):
    out = []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 2:
            raise IngestError(f"{path}:{lineno}: expected 'node<TAB>label'",
                              line=lineno)
        try:
            label = int(parts[1])
        except ValueError:
            raise IngestError(f"{path}:{lineno}: label {parts[1]!r} is not "
                              "an integer", line=lineno)
        out.append((parts[0], label, lineno))
    return out


def parse_split_file(path):
    out = []
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 2 or parts[1] not in _ROLES:
            raise IngestError(
                f"{path}:{lineno}: expected 'node<TAB>{{train|valid|test}}'",
                line=lineno,
            )
        out.append((parts[0], _ROLES[parts[1]], lineno))
    return out


def _is_dmat(path):
    with open(path, "rb") as fh:
        return fh.read(len(MAGIC)) == MAGIC


def parse_feature_file(path, id_of):
    """Features as (n, d) float32, rows ordered by mapped node id."""
    if _is_dmat(path):
        mat = read_dmat(path)
        if mat.shape[0] != len(id_of):
            raise IngestError(
                f"{path}: feature matrix has {mat.shape[0]} rows, dataset "
                f"has {len(id_of)} nodes"
            )
        return mat
    rows = {}
    dim = None
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) < 2:
            raise IngestError(f"{path}:{lineno}: expected 'node<TAB>values'",
                              line=lineno)
        token = parts[0]
        if token not in id_of:
            raise IngestError(f"{path}:{lineno}: unknown node id {token!r}",
                              line=lineno)
        try:
            values = [float(v) for v in parts[1:]]
        except ValueError:
            raise IngestError(f"{path}:{lineno}: unparsable feature value",
                              line=lineno)
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise IngestError(
                f"{path}:{lineno}: feature row has {len(values)} values, "
                f"expected {dim}", line=lineno,
            )
        rows[id_of[token]] = values
    if len(rows) != len(id_of):
        raise IngestError(
            f"{path}: feature rows cover {len(rows)} nodes, dataset has "
            f"{len(id_of)}"
        )
    out = np.zeros((len(id_of), dim), dtype=np.float32)
    for i, values in rows.items():
        out[i] = values
    return out


def _build_id_map(tokens):
    uniq = sorted(set(tokens))
    try:
        uniq = sorted(uniq, key=int)
    except ValueError:
        pass
    return {tok: i for i, tok in enumerate(uniq)}


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class Dataset:
    name: str
    edges: np.ndarray  # (m, 2) int64, as ingested (directed)
    x: np.ndarray  # (n, d) float64
    labels: LabelVector
    splits: list  # list[SplitMasks]
    id_map: dict = None

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def m(self):
        return self.edges.shape[0]

    def graph(self, symmetrize=False):
        return build_graph(self.edges, self.n, symmetrize=symmetrize)


def ingest(edge_path, feature_path, label_path, split_paths, out_dir,
           name="dataset", classes=None):
    """Validate raw files, map ids, and write a bundle directory."""
    labeled = parse_label_file(label_path)
    id_of = _build_id_map([tok for tok, _, _ in labeled])
    n = len(id_of)
    if n >= _MAX_EXACT:
        raise IngestError(f"{n} nodes exceeds the bundle id limit {_MAX_EXACT}")

    y = np.full(n, -1, dtype=np.int64)
    for tok, label, lineno in labeled:
        if classes is not None and label >= classes:
            raise IngestError(
                f"{label_path}:{lineno}: label {label} >= class count "
                f"{classes}", line=lineno,
            )
        y[id_of[tok]] = label
    c = classes if classes is not None else int(y.max()) + 1

    raw_edges = parse_edge_file(edge_path)
    edges = np.empty((len(raw_edges), 2), dtype=np.int64)
    for row, (a, b, lineno) in enumerate(raw_edges):
        for col, tok in enumerate((a, b)):
            if tok not in id_of:
                raise IngestError(
                    f"{edge_path}:{lineno}: unknown node id {tok!r}",
                    line=lineno,
                )
            edges[row, col] = id_of[tok]

    x = parse_feature_file(feature_path, id_of)

    split_matrix = np.empty((n, len(split_paths)), dtype=np.int64)
    for k, split_path in enumerate(split_paths):
        seen = np.zeros(n, dtype=bool)
        for tok, role, lineno in parse_split_file(split_path):
            if tok not in id_of:
                raise IngestError(
                    f"{split_path}:{lineno}: unknown node id {tok!r}",
                    line=lineno,
                )
            split_matrix[id_of[tok], k] = role
            seen[id_of[tok]] = True
        if not seen.all():
            missing = int(np.flatnonzero(~seen)[0])
            raise IngestError(
                f"{split_path}: node id {missing} has no role in this split"
            )

    os.makedirs(out_dir, exist_ok=True)
    files = {
        "features.dmat": x,
        "labels.dmat": y[:, None].astype(np.float32),
        "edges.dmat": edges.astype(np.float32),
        "splits.dmat": split_matrix.astype(np.float32),
    }
    checksums = {}
    for fname, mat in files.items():
        path = os.path.join(out_dir, fname)
        write_dmat(path, mat)
        checksums[fname] = sha256_file(path)
    manifest = {
        "format": "glinkx-bundle-v1",
        "name": name,
        "n": n,
        "m": int(edges.shape[0]),
        "d_x": int(x.shape[1]),
        "c": int(c),
        "n_splits": len(split_paths),
        "checksums": checksums,
        "id_map": {tok: int(i) for tok, i in id_of.items()},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_bundle(bundle_dir):
    """Load a bundle, verifying every checksum."""
    manifest_path = os.path.join(bundle_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FormatError(f"{bundle_dir}: not a bundle (no manifest.json)")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "glinkx-bundle-v1":
        raise FormatError(f"{bundle_dir}: unknown bundle format")
    for fname, expected in manifest["checksums"].items():
        actual = sha256_file(os.path.join(bundle_dir, fname))
        if actual != expected:
            raise FormatError(
                f"{bundle_dir}/{fname}: checksum mismatch (corrupt bundle)"
            )
    n = manifest["n"]
    x = read_dmat(os.path.join(bundle_dir, "features.dmat"),
                  expected_rows=n).astype(np.float64)
    y = read_dmat(os.path.join(bundle_dir, "labels.dmat"),
                  expected_rows=n).astype(np.int64)[:, 0]
    edges = read_dmat(os.path.join(bundle_dir, "edges.dmat")).astype(np.int64)
    splits_mat = read_dmat(os.path.join(bundle_dir, "splits.dmat"),
                           expected_rows=n).astype(np.uint8)
    splits = [SplitMasks(splits_mat[:, k])
              for k in range(splits_mat.shape[1])]
    id_map = manifest.get("id_map")
    return Dataset(
        name=manifest["name"],
        edges=edges,
        x=x,
        labels=LabelVector(y=y, c=manifest["c"]),
        splits=splits,
        id_map=id_map,
    )
