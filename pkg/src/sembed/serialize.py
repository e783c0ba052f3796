"""Lossless JSON serialization of graphs, embeddings, and S-graphs.

Formats are documented in docs/formats.md; field names are part of the
on-disk contract and round-trips must be exact (floats are written with
shortest-roundtrip ``repr``).
"""

from __future__ import annotations

import json

import numpy as np

from .embedding import SEmbedding, origami_map
from .planar import QuadGraph
from .sgraph import SGraph

__all__ = [
    "graph_to_dict",
    "graph_from_dict",
    "embedding_to_dict",
    "embedding_from_dict",
    "save_embedding",
    "load_embedding",
    "sgraph_to_dict",
    "sgraph_from_dict",
    "save_json",
    "load_json",
]

GRAPH_FORMAT = "sembed-graph"
EMBEDDING_FORMAT = "sembed-embedding"
SGRAPH_FORMAT = "sembed-sgraph"
FORMAT_VERSION = 1


def _pairs(arr: np.ndarray) -> list:
    """Complex array -> [[re, im], ...]."""
    a = np.asarray(arr, dtype=complex)
    return [[float(x.real), float(x.imag)] for x in a]


def _unpairs(rows) -> np.ndarray:
    return np.array([complex(r, i) for r, i in rows], dtype=complex)


def _check_header(d: dict, fmt: str):
    if d.get("format") != fmt:
        raise ValueError(f"not a {fmt} document: format={d.get('format')!r}")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported {fmt} version {d.get('version')!r}")


def graph_to_dict(g: QuadGraph) -> dict:
    return {
        "format": GRAPH_FORMAT,
        "version": FORMAT_VERSION,
        "primal": list(range(g.n_primal)),
        "dual": list(range(g.n_dual)),
        "quads": np.asarray(g.quads).tolist(),
        "boundary": {"outer_dual": 0} if g.has_outer else None,
    }


def graph_from_dict(d: dict) -> QuadGraph:
    _check_header(d, GRAPH_FORMAT)
    quads = np.asarray(d["quads"], dtype=np.int64)
    has_outer = d.get("boundary") is not None
    # corner tables are derived deterministically from the quad list
    from .planar import _finish_quad_graph
    return _finish_quad_graph(len(d["primal"]), len(d["dual"]),
                              quads, has_outer)


def embedding_to_dict(emb: SEmbedding, with_origami: bool = False) -> dict:
    d = {
        "format": EMBEDDING_FORMAT,
        "version": FORMAT_VERSION,
        "graph": graph_to_dict(emb.graph),
        "positions": _pairs(emb.pos),
        "centres": _pairs(emb.pos_quad),
        "radii": [float(r) for r in emb.radii],
        "thetas": [float(t) for t in emb.thetas],
        "origami": None,
        "meta": {k: v for k, v in emb.meta.items()
                 if isinstance(v, (int, float, str, bool))},
    }
    if with_origami:
        d["origami"] = _pairs(origami_map(emb).values)
    return d


def embedding_from_dict(d: dict) -> SEmbedding:
    _check_header(d, EMBEDDING_FORMAT)
    g = graph_from_dict(d["graph"])
    emb = SEmbedding(
        graph=g,
        pos=_unpairs(d["positions"]),
        pos_quad=_unpairs(d["centres"]),
        radii=np.asarray(d["radii"], dtype=float),
        thetas=np.asarray(d["thetas"], dtype=float),
        meta=dict(d.get("meta") or {}),
    )
    return emb


def sgraph_to_dict(sg: SGraph) -> dict:
    """Walk data only: enough to solve Green systems, not to re-derive
    the originating embedding."""
    return {
        "format": SGRAPH_FORMAT,
        "version": FORMAT_VERSION,
        "alpha": [float(np.real(sg.alpha)), float(np.imag(sg.alpha))],
        "points": _pairs(sg.points),
        "cls_of_lambda": np.asarray(sg.cls_of_lambda).tolist(),
        "cls_of_centre": np.asarray(sg.cls_of_centre).tolist(),
        "degenerate": [int(v) for v in sg.degenerate],
        "neighbors": [[[int(u), float(q)] for u, q in nb]
                      for nb in sg.neighbors],
        "mu": [float(m) for m in sg.mu],
        "interior": np.asarray(sg.interior).astype(int).tolist(),
    }


def sgraph_from_dict(d: dict) -> SGraph:
    _check_header(d, SGRAPH_FORMAT)
    n = len(d["points"])
    return SGraph(
        emb=None, tfaces=None,
        alpha=complex(d["alpha"][0], d["alpha"][1]),
        points=_unpairs(d["points"]),
        cls_of_lambda=np.asarray(d["cls_of_lambda"], dtype=np.int64),
        cls_of_centre=np.asarray(d["cls_of_centre"], dtype=np.int64),
        degenerate=list(d["degenerate"]),
        collapsed_whites=[],
        neighbors=[[(int(u), float(q)) for u, q in nb]
                   for nb in d["neighbors"]],
        mu=np.asarray(d["mu"], dtype=float),
        black_of_vertex=np.full(n, -1, dtype=np.int64),
        black_faces=[],
        interior=np.asarray(d["interior"], dtype=bool),
    )


def save_json(path, d: dict):
    with open(path, "w", newline="\n") as f:
        json.dump(d, f, indent=1)
        f.write("\n")


def load_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def save_embedding(path, emb: SEmbedding, with_origami: bool = False):
    save_json(path, embedding_to_dict(emb, with_origami))


def load_embedding(path) -> SEmbedding:
    return embedding_from_dict(load_json(path))
