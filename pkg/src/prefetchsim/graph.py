"""Synthetic power-law graphs, partitioning, and layered neighbor sampling.

All randomness flows through explicit ``numpy.random.Generator`` instances so
that every artifact (graph, partition, sample stream) is reproducible from
seeds alone. Node ids are dense ints in ``[0, num_nodes)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Graph",
    "PartitionMap",
    "SampleBatch",
    "generate_graph",
    "relabel_graph",
    "save_graph",
    "load_graph",
    "partition_graph",
    "make_minibatches",
    "sample_neighbors",
    "split_local_remote",
]

# Hard cap on directed endpoints; generation above this is refused outright.
MAX_ENDPOINTS = 200_000_000

PARTITION_STRATEGIES = ("hash", "range", "greedy-edge-cut")


@dataclass(frozen=True)
class Graph:
    """Undirected graph in CSR form; every edge is stored in both directions."""

    num_nodes: int
    offsets: np.ndarray  # int64, shape (num_nodes + 1,)
    neighbors: np.ndarray  # int64, shape (num_edges,)

    def __post_init__(self) -> None:
        assert self.offsets.shape == (self.num_nodes + 1,)
        assert self.offsets[0] == 0 and self.offsets[-1] == len(self.neighbors)

    @property
    def num_edges(self) -> int:
        """Directed edge count (twice the undirected count)."""
        return int(len(self.neighbors))

    def degree(self, v: int) -> int:
        return int(self.offsets[v + 1] - self.offsets[v])

    def neighbors_of(self, v: int) -> np.ndarray:
        return self.neighbors[self.offsets[v] : self.offsets[v + 1]]


@dataclass(frozen=True)
class PartitionMap:
    """Node -> partition owner assignment."""

    num_parts: int
    owner: np.ndarray  # int64, shape (num_nodes,)

    def nodes_of(self, part: int) -> np.ndarray:
        return np.flatnonzero(self.owner == part).astype(np.int64)

    def counts(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.num_parts).astype(np.int64)


@dataclass
class SampleBatch:
    """One layered neighborhood sample for a minibatch of seed nodes.

    ``all_nodes`` is deduplicated in first-occurrence order; ``counts`` holds
    the raw draw multiplicity of each entry (seeds count once).
    """

    seeds: np.ndarray
    layers: list[np.ndarray]
    all_nodes: np.ndarray
    counts: np.ndarray
    epoch: int = 0
    minibatch_index: int = 0

    def multiplicity_of(self, nodes: np.ndarray) -> np.ndarray:
        """Draw counts for ``nodes`` (each must appear in ``all_nodes``)."""
        order = np.argsort(self.all_nodes, kind="stable")
        pos = np.searchsorted(self.all_nodes[order], nodes)
        return self.counts[order[pos]]


def _unique_first_occurrence(values: np.ndarray) -> np.ndarray:
    """Deduplicate keeping first-occurrence order (np.unique sorts, which
    would break relabeling equivariance of the sampler)."""
    if len(values) == 0:
        return values.astype(np.int64)
    _, first = np.unique(values, return_index=True)
    return values[np.sort(first)]


def _csr_from_pairs(num_nodes: int, src: np.ndarray, dst: np.ndarray) -> Graph:
    """Build symmetric CSR from undirected pairs (each pair stored once)."""
    u = np.concatenate([src, dst])
    v = np.concatenate([dst, src])
    order = np.lexsort((v, u))
    u, v = u[order], v[order]
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(offsets, u + 1, 1)
    offsets = np.cumsum(offsets)
    return Graph(num_nodes=num_nodes, offsets=offsets, neighbors=v.astype(np.int64))


def _components(num_nodes: int, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Connected-component labels via union-find over undirected pairs."""
    parent = np.arange(num_nodes, dtype=np.int64)

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:  # path compression
            parent[a], a = root, parent[a]
        return root

    for a, b in zip(src.tolist(), dst.tolist()):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return np.array([find(i) for i in range(num_nodes)], dtype=np.int64)


def generate_graph(
    num_nodes: int, avg_degree: float, skew: float, seed: int
) -> Graph:
    """Generate a connected-enough undirected power-law graph.

    Degrees are drawn from a discrete power law with exponent ``skew`` and
    rescaled so the realized average degree lands within 10% of
    ``avg_degree`` after self-loop/duplicate cleanup. Components beyond the
    largest are stitched on with single deterministic edges so at least 90%
    of nodes are mutually reachable.
    """
    if num_nodes < 2:
        raise ValueError("num_nodes must be >= 2")
    if avg_degree < 1:
        raise ValueError("avg_degree must be >= 1")
    if skew <= 1.0:
        raise ValueError("skew must be > 1 for a normalizable power law")
    if num_nodes * avg_degree > MAX_ENDPOINTS:
        raise ValueError(
            f"size error: num_nodes*avg_degree={num_nodes * avg_degree:.0f} "
            f"exceeds cap {MAX_ENDPOINTS}"
        )

    rng = np.random.default_rng(seed)
    # Inverse-transform sample of a continuous power law with x_min = 1,
    # floored to ints; heavy tail clipped so one hub cannot soak up the graph.
    u = rng.random(num_nodes)
    raw = np.floor((1.0 - u) ** (-1.0 / (skew - 1.0))).astype(np.int64)
    cap = max(2, num_nodes // 4)
    raw = np.clip(raw, 1, cap)

    # Self-loop/duplicate cleanup after stub matching loses a density- and
    # skew-dependent share of edges, so calibrate the overshoot iteratively.
    src = dst = None
    scale = avg_degree / raw.mean()
    for _ in range(8):
        deg = np.maximum(1, np.rint(raw * scale)).astype(np.int64)
        deg = np.minimum(deg, num_nodes - 1)
        if deg.sum() % 2 == 1:
            deg[int(np.argmin(deg))] += 1

        # Configuration-model stub matching.
        stubs = np.repeat(np.arange(num_nodes, dtype=np.int64), deg)
        rng.shuffle(stubs)
        s, d = stubs[0::2].copy(), stubs[1::2].copy()
        keep = s != d
        s, d = s[keep], d[keep]
        lo, hi = np.minimum(s, d), np.maximum(s, d)
        key = lo * num_nodes + hi
        _, first = np.unique(key, return_index=True)
        first.sort()
        s, d = lo[first], hi[first]
        src, dst = s, d
        realized = 2.0 * len(src) / num_nodes
        if abs(realized - avg_degree) <= 0.08 * avg_degree:
            break
        scale *= avg_degree / realized

    labels = _components(num_nodes, src, dst)
    counts = np.bincount(labels, minlength=num_nodes)
    giant = int(np.argmax(counts))
    if counts[giant] < 0.9 * num_nodes:
        # Attach every stray component to the giant by one edge from its
        # lowest-id node; deterministic and degree-neutral at scale.
        extra_src, extra_dst = [], []
        for comp in np.unique(labels):
            if comp == giant:
                continue
            member = int(np.flatnonzero(labels == comp)[0])
            extra_src.append(min(member, giant))
            extra_dst.append(max(member, giant))
        src = np.concatenate([src, np.array(extra_src, dtype=np.int64)])
        dst = np.concatenate([dst, np.array(extra_dst, dtype=np.int64)])

    graph = _csr_from_pairs(num_nodes, src, dst)
    realized = graph.num_edges / num_nodes
    if abs(realized - avg_degree) > 0.1 * avg_degree:
        raise ValueError(
            f"degree calibration failed: realized avg {realized:.2f} "
            f"vs requested {avg_degree}"
        )
    return graph


def relabel_graph(graph: Graph, perm: np.ndarray) -> Graph:
    """Relabel nodes by ``perm`` (old id -> new id), preserving each node's
    neighbor-sequence order positionally."""
    perm = np.asarray(perm, dtype=np.int64)
    assert perm.shape == (graph.num_nodes,)
    degrees = np.diff(graph.offsets)
    new_offsets = np.zeros(graph.num_nodes + 1, dtype=np.int64)
    new_offsets[1:] = np.cumsum(degrees[np.argsort(perm, kind="stable")])
    new_neighbors = np.empty_like(graph.neighbors)
    inv = np.argsort(perm, kind="stable")  # new id -> old id
    for new_id in range(graph.num_nodes):
        old_id = inv[new_id]
        seq = perm[graph.neighbors[graph.offsets[old_id] : graph.offsets[old_id + 1]]]
        new_neighbors[new_offsets[new_id] : new_offsets[new_id + 1]] = seq
    return Graph(graph.num_nodes, new_offsets, new_neighbors)


def save_graph(graph: Graph, path: str | Path, meta: dict | None = None) -> None:
    """Write an edge list (`src dst` per line, each undirected edge once,
    src < dst, sorted) plus a JSON metadata sidecar at ``<path>.meta.json``."""
    path = Path(path)
    u = np.repeat(np.arange(graph.num_nodes, dtype=np.int64), np.diff(graph.offsets))
    v = graph.neighbors
    keep = u < v
    lines = [f"{a} {b}" for a, b in zip(u[keep].tolist(), v[keep].tolist())]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    sidecar = {
        "num_nodes": graph.num_nodes,
        "num_edges": graph.num_edges,
        "format": "edge-list-v1",
    }
    if meta:
        sidecar.update(meta)
    Path(str(path) + ".meta.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n"
    )


def load_graph(path: str | Path) -> Graph:
    """Round-trip loader for :func:`save_graph` output."""
    path = Path(path)
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    num_nodes = int(meta["num_nodes"])
    src, dst = [], []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        a, b = line.split()
        src.append(int(a))
        dst.append(int(b))
    graph = _csr_from_pairs(
        num_nodes, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)
    )
    if graph.num_edges != int(meta["num_edges"]):
        raise ValueError(
            f"edge count mismatch: file has {graph.num_edges}, "
            f"sidecar says {meta['num_edges']}"
        )
    return graph


def _splitmix64(values: np.ndarray) -> np.ndarray:
    """Platform-stable integer mix (splitmix64 finalizer), vectorized."""
    z = values.astype(np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def partition_graph(graph: Graph, num_parts: int, strategy: str = "greedy-edge-cut") -> PartitionMap:
    """Assign every node an owner partition.

    ``hash``: splitmix64(id) mod P (stateless, balanced in expectation).
    ``range``: contiguous id blocks of near-equal size.
    ``greedy-edge-cut``: round-robin BFS frontier growth from spread seeds
    with a 10% size slack, a cheap stand-in for a locality-aware partitioner.
    """
    if num_parts < 1 or num_parts > graph.num_nodes:
        raise ValueError("num_parts must be in [1, num_nodes]")
    if strategy not in PARTITION_STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")

    n, p = graph.num_nodes, num_parts
    if strategy == "hash":
        owner = (_splitmix64(np.arange(n, dtype=np.int64)) % np.uint64(p)).astype(
            np.int64
        )
        # A tiny P with an unlucky hash could starve a partition; repair
        # deterministically by donating from the largest.
        for part in range(p):
            if not np.any(owner == part):
                donor = int(np.argmax(np.bincount(owner, minlength=p)))
                owner[int(np.flatnonzero(owner == donor)[0])] = part
    elif strategy == "range":
        owner = (np.arange(n, dtype=np.int64) * p) // n
    else:
        owner = np.full(n, -1, dtype=np.int64)
        cap = math.ceil(n / p * 1.1)
        sizes = [0] * p
        # Seeds spaced through the id range; frontiers grow one hop per turn.
        frontiers: list[list[int]] = []
        for part in range(p):
            s = (part * n) // p
            owner[s] = part
            sizes[part] = 1
            frontiers.append([s])
        grew = True
        while grew:
            grew = False
            for part in range(p):
                if not frontiers[part] or sizes[part] >= cap:
                    continue
                next_frontier: list[int] = []
                for v in frontiers[part]:
                    for w in graph.neighbors_of(v).tolist():
                        if owner[w] == -1 and sizes[part] < cap:
                            owner[w] = part
                            sizes[part] += 1
                            next_frontier.append(w)
                frontiers[part] = next_frontier
                if next_frontier:
                    grew = True
        for v in np.flatnonzero(owner == -1).tolist():
            part = int(np.argmin(sizes))
            owner[v] = part
            sizes[part] += 1
    return PartitionMap(num_parts=p, owner=owner)


def edge_cut(graph: Graph, pm: PartitionMap) -> int:
    """Number of undirected edges whose endpoints live on different partitions."""
    u = np.repeat(np.arange(graph.num_nodes, dtype=np.int64), np.diff(graph.offsets))
    v = graph.neighbors
    keep = u < v
    return int(np.count_nonzero(pm.owner[u[keep]] != pm.owner[v[keep]]))


def make_minibatches(
    train_nodes: np.ndarray, batch_size: int, epoch_seed: int
) -> list[np.ndarray]:
    """Shuffle ``train_nodes`` with ``epoch_seed`` and split into chunks of
    ``batch_size`` (last chunk may be short). Empty input -> empty list."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    if len(train_nodes) == 0:
        return []
    rng = np.random.default_rng(epoch_seed)
    perm = rng.permutation(train_nodes)
    return [perm[i : i + batch_size] for i in range(0, len(perm), batch_size)]


def sample_neighbors(
    graph: Graph,
    seeds: np.ndarray,
    fanouts: list[int],
    rng: np.random.Generator,
) -> SampleBatch:
    """Layered uniform-without-replacement neighbor sampling.

    Per hop, each frontier node contributes min(degree, fanout) distinct
    neighbors: all of them when degree <= fanout (no randomness consumed),
    else a uniform subset chosen by ranking per-edge random keys. Draws are
    made against neighbor-list *positions*, and all ordering is
    first-occurrence, so relabeling nodes permutes the output identically.
    """
    seeds = _unique_first_occurrence(np.asarray(seeds, dtype=np.int64))
    if len(seeds) == 0:
        raise ValueError("seeds must be non-empty")
    if any(f < 1 for f in fanouts):
        raise ValueError("fanouts must be positive")

    layers: list[np.ndarray] = []
    draw_pool: list[np.ndarray] = [seeds]
    frontier = seeds
    for fanout in fanouts:
        degs = graph.offsets[frontier + 1] - graph.offsets[frontier]
        take_all = degs <= fanout
        picked: list[np.ndarray] = []

        small = frontier[take_all]
        if len(small):
            picked.append(
                np.concatenate(
                    [graph.neighbors_of(int(v)) for v in small]
                    or [np.empty(0, dtype=np.int64)]
                )
            )

        big = frontier[~take_all]
        if len(big):
            big_degs = degs[~take_all]
            total = int(big_degs.sum())
            group = np.repeat(np.arange(len(big)), big_degs)
            keys = rng.random(total)
            order = np.lexsort((keys, group))
            starts = np.zeros(len(big), dtype=np.int64)
            starts[1:] = np.cumsum(big_degs)[:-1]
            rank = np.arange(total, dtype=np.int64) - starts[group[order]]
            chosen = order[rank < fanout]
            # Map chosen positions back to neighbor values.
            within = np.arange(total, dtype=np.int64) - starts[group]
            pos = graph.offsets[big][group[chosen]] + within[chosen]
            picked.append(graph.neighbors[pos])

        draws = (
            np.concatenate(picked) if picked else np.empty(0, dtype=np.int64)
        )
        draw_pool.append(draws)
        layer = _unique_first_occurrence(draws)
        layers.append(layer)
        frontier = layer
        if len(frontier) == 0:
            break

    every_draw = np.concatenate(draw_pool)
    all_nodes = _unique_first_occurrence(every_draw)
    uniq_sorted, counts_sorted = np.unique(every_draw, return_counts=True)
    counts = counts_sorted[np.searchsorted(uniq_sorted, all_nodes)]
    return SampleBatch(seeds=seeds, layers=layers, all_nodes=all_nodes, counts=counts)


def split_local_remote(
    batch: SampleBatch, pm: PartitionMap, part: int
) -> tuple[set[int], set[int]]:
    """Split sampled nodes into locally owned vs remote sets for ``part``."""
    owners = pm.owner[batch.all_nodes]
    local = batch.all_nodes[owners == part]
    remote = batch.all_nodes[owners != part]
    return set(local.tolist()), set(remote.tolist())
