"""Mixed shared-memory / message-passing topologies and their resilience parameters.

Process sets are handled internally as integer bitmasks; bit ``p`` is process ``p``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional

MAX_ENUM_N = 20

MODELS = ("general", "uniform-mm", "general-mm", "cluster", "pure-mp")


class TopologyError(ValueError):
    """Malformed topology input."""


def _mask(procs: Iterable[int]) -> int:
    m = 0
    for p in procs:
        m |= 1 << p
    return m


def _members(mask: int) -> frozenset:
    out = []
    p = 0
    while mask:
        if mask & 1:
            out.append(p)
        mask >>= 1
        p += 1
    return frozenset(out)


def _popcount(mask: int) -> int:
    return bin(mask).count("1")


@dataclass(frozen=True)
class MemorySpec:
    readers: frozenset
    writers: frozenset

    def __post_init__(self):
        object.__setattr__(self, "readers", frozenset(self.readers))
        object.__setattr__(self, "writers", frozenset(self.writers))
        if not self.readers and not self.writers:
            raise TopologyError("memory with neither readers nor writers")


@dataclass(frozen=True)
class SharedMemoryGraph:
    n: int
    edges: frozenset = frozenset()

    def __post_init__(self):
        if self.n < 1:
            raise TopologyError("graph needs n >= 1")
        norm = set()
        for e in self.edges:
            u, v = e
            if u == v:
                raise TopologyError(f"self-loop at {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise TopologyError(f"edge {e} out of range for n={self.n}")
            norm.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(norm))

    def neighbors(self, p: int) -> frozenset:
        return frozenset(v if u == p else u for u, v in self.edges if p in (u, v))

    def closed_masks(self) -> list:
        """Bitmask of {p} plus neighbours, per process."""
        masks = [1 << p for p in range(self.n)]
        for u, v in self.edges:
            masks[u] |= 1 << v
            masks[v] |= 1 << u
        return masks


@dataclass(frozen=True)
class Clustering:
    clusters: tuple

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(frozenset(c) for c in self.clusters))
        if any(not c for c in self.clusters):
            raise TopologyError("empty cluster")

    @property
    def n(self) -> int:
        return sum(len(c) for c in self.clusters)

    def validate(self, n: Optional[int] = None) -> None:
        n = self.n if n is None else n
        seen: set = set()
        for c in self.clusters:
            if seen & c:
                raise TopologyError("clusters are not disjoint")
            seen |= c
        if seen != set(range(n)):
            raise TopologyError(f"clusters do not cover processes 0..{n - 1}")

    def cluster_of(self) -> list:
        out: list = [None] * self.n
        for c in self.clusters:
            for p in c:
                out[p] = c
        return out


@dataclass(frozen=True)
class MixedTopology:
    n: int
    memories: tuple = ()
    model: str = "general"
    graph: Optional[SharedMemoryGraph] = None
    domain: Optional[tuple] = None
    clustering: Optional[Clustering] = None

    def __post_init__(self):
        if self.n < 1:
            raise TopologyError("n must be >= 1")
        if self.model not in MODELS:
            raise TopologyError(f"unknown model {self.model!r}")
        object.__setattr__(self, "memories", tuple(self.memories))
        for i, mem in enumerate(self.memories):
            for p in mem.readers | mem.writers:
                if not (isinstance(p, int) and 0 <= p < self.n):
                    raise TopologyError(f"memories[{i}]: process id {p!r} out of range")

    def readable(self, p: int) -> tuple:
        """Indices of memories ``p`` can read (R_p)."""
        return tuple(i for i, m in enumerate(self.memories) if p in m.readers)

    def writable(self, p: int) -> tuple:
        """Indices of memories ``p`` can write (W_p)."""
        return tuple(i for i, m in enumerate(self.memories) if p in m.writers)

    def is_normalized(self) -> bool:
        return all(
            any(p in m.readers and p in m.writers for m in self.memories)
            for p in range(self.n)
        )


@dataclass(frozen=True)
class ReadRelation:
    """``reads(p, q)`` holds when p can read some memory q can write."""

    n: int
    rows: tuple  # rows[p] = bitmask of q with p -> q

    def reads(self, p: int, q: int) -> bool:
        return bool(self.rows[p] >> q & 1)

    def __getitem__(self, pq):
        p, q = pq
        return self.reads(p, q)

    def matrix(self) -> list:
        return [[self.reads(p, q) for q in range(self.n)] for p in range(self.n)]

    def both(self, p: int, q: int) -> bool:
        return self.reads(p, q) and self.reads(q, p)

    def is_reflexive(self) -> bool:
        return all(self.reads(p, p) for p in range(self.n))


@dataclass(frozen=True)
class PartitionWitness:
    f: int
    P: frozenset
    Q: frozenset


@dataclass(frozen=True)
class SmCut:
    B1: frozenset
    B2: frozenset
    S: frozenset
    T: frozenset

    @property
    def B(self) -> frozenset:
        return self.B1 | self.B2


@dataclass
class ResilienceReport:
    n: int
    f_opt: int
    f_maj: int
    rho: int
    sigma: int
    model: str = "general"
    model_params: dict = field(default_factory=dict)
    witness: Optional[PartitionWitness] = None

    def to_dict(self) -> dict:
        w = None
        if self.witness is not None:
            w = {"f": self.witness.f, "P": sorted(self.witness.P), "Q": sorted(self.witness.Q)}
        return {
            "n": self.n,
            "model": self.model,
            "f_opt": self.f_opt,
            "f_maj": self.f_maj,
            "rho": self.rho,
            "sigma": self.sigma,
            "model_params": dict(self.model_params),
            "witness": w,
        }


# --- construction -----------------------------------------------------------

def normalize(topology: MixedTopology) -> MixedTopology:
    """Add a private read/write memory for every process that lacks one."""
    missing = [
        p for p in range(topology.n)
        if not any(p in m.readers and p in m.writers for m in topology.memories)
    ]
    if not missing:
        return topology
    extra = tuple(MemorySpec(frozenset({p}), frozenset({p})) for p in missing)
    return MixedTopology(
        n=topology.n,
        memories=topology.memories + extra,
        model=topology.model,
        graph=topology.graph,
        domain=topology.domain,
        clustering=topology.clustering,
    )


def from_memories(n: int, memories: Iterable) -> MixedTopology:
    mems = tuple(m if isinstance(m, MemorySpec) else MemorySpec(*m) for m in memories)
    return normalize(MixedTopology(n=n, memories=mems, model="general"))


def from_pure_mp(n: int) -> MixedTopology:
    return normalize(MixedTopology(n=n, model="pure-mp"))


def from_uniform_mm(graph: SharedMemoryGraph) -> MixedTopology:
    """One memory per process p, shared by p and its neighbours."""
    mems = []
    for p in range(graph.n):
        s = frozenset({p}) | graph.neighbors(p)
        mems.append(MemorySpec(s, s))
    return normalize(MixedTopology(n=graph.n, memories=tuple(mems), model="uniform-mm", graph=graph))


def from_general_mm(n: int, domain: Iterable) -> MixedTopology:
    dom = tuple(frozenset(s) for s in domain)
    for i, s in enumerate(dom):
        if not s:
            raise TopologyError(f"domain[{i}] is empty")
        if any(not (0 <= p < n) for p in s):
            raise TopologyError(f"domain[{i}] has ids outside 0..{n - 1}")
    mems = tuple(MemorySpec(s, s) for s in dom)
    return normalize(MixedTopology(n=n, memories=mems, model="general-mm", domain=dom))


def from_clusters(clustering: Clustering, n: Optional[int] = None) -> MixedTopology:
    clustering.validate(n)
    n = clustering.n
    mems = tuple(MemorySpec(c, c) for c in clustering.clusters)
    return normalize(MixedTopology(n=n, memories=mems, model="cluster", clustering=clustering))


def square_graph(graph: SharedMemoryGraph) -> SharedMemoryGraph:
    adj = [graph.neighbors(p) for p in range(graph.n)]
    edges = set(graph.edges)
    for w in range(graph.n):
        for u in adj[w]:
            for v in adj[w]:
                if u < v:
                    edges.add((u, v))
    return SharedMemoryGraph(graph.n, frozenset(edges))


# --- relation and resilience ------------------------------------------------

def read_relation(topology: MixedTopology) -> ReadRelation:
    if not topology.is_normalized():
        raise TopologyError("topology must be normalized first")
    rows = [0] * topology.n
    for m in topology.memories:
        wmask = _mask(m.writers)
        for p in m.readers:
            rows[p] |= wmask
    return ReadRelation(topology.n, tuple(rows))


def communicate_set(relation: ReadRelation, P: Iterable[int]) -> frozenset:
    return _members(_reach(relation.rows, _mask(P)))


def _reach(rows, pmask: int) -> int:
    out = 0
    p = 0
    while pmask:
        if pmask & 1:
            out |= rows[p]
        pmask >>= 1
        p += 1
    return out


def _check_n(n: int, max_n: int) -> None:
    if n > max_n:
        raise ValueError(f"n={n} exceeds the enumeration cap {max_n}")


def _min_reach(rows, n: int, k: int, stop_at: Optional[int] = None):
    """Smallest |union of rows over a k-subset| and the first subset attaining it.

    Stops early as soon as a subset with reach size <= ``stop_at`` is seen.
    """
    best = None
    best_P = None
    for P in combinations(range(n), k):
        m = 0
        for p in P:
            m |= rows[p]
        c = _popcount(m)
        if best is None or c < best:
            best, best_P = c, (P, m)
            if stop_at is not None and c <= stop_at:
                break
    return best, best_P


def is_f_partitionable(relation: ReadRelation, f: int, max_n: int = MAX_ENUM_N) -> Optional[PartitionWitness]:
    """Witness (P, Q) of size n-f with P unable to read anything Q writes, or None."""
    n = relation.n
    if not 0 <= f <= n:
        raise ValueError(f"f={f} outside 0..{n}")
    _check_n(n, max_n)
    k = n - f
    for P in combinations(range(n), k):
        m = 0
        for p in P:
            m |= relation.rows[p]
        if n - _popcount(m) >= k:
            free = [q for q in range(n) if not m >> q & 1]
            return PartitionWitness(f, frozenset(P), frozenset(free[:k]))
    return None


def compute_f_opt(relation: ReadRelation, max_n: int = MAX_ENUM_N) -> int:
    n = relation.n
    _check_n(n, max_n)
    f = (n - 1) // 2
    while f < n - 1 and is_f_partitionable(relation, f + 1, max_n) is None:
        f += 1
    return f


def compute_f_maj(relation: ReadRelation, max_n: int = MAX_ENUM_N) -> int:
    n = relation.n
    _check_n(n, max_n)
    for f in range(n - 1, -1, -1):
        smallest, _ = _min_reach(relation.rows, n, n - f, stop_at=n // 2)
        if smallest > n // 2:
            return f
    return 0


def compute_rho_sigma(topology: MixedTopology) -> tuple:
    rho = sum(len(m.writers) for m in topology.memories)
    sigma = sum(len(m.readers) * len(m.writers) for m in topology.memories)
    return rho, sigma


def compute_f_mm(graph: SharedMemoryGraph, max_n: int = MAX_ENUM_N) -> int:
    """Largest f such that every n-f processes represent a strict majority."""
    n = graph.n
    _check_n(n, max_n)
    rows = graph.closed_masks()
    for f in range(n - 1, -1, -1):
        smallest, _ = _min_reach(rows, n, n - f, stop_at=n // 2)
        if smallest > n // 2:
            return f
    return 0


def compute_f_g(graph: SharedMemoryGraph, max_n: int = MAX_ENUM_N) -> int:
    """Resilience over the square graph: any two disjoint (n-f)-sets share a G^2 edge."""
    sq = square_graph(graph)
    return compute_f_opt(ReadRelation(graph.n, tuple(sq.closed_masks())), max_n)


def compute_f_cluster(clustering: Clustering, max_n: int = MAX_ENUM_N) -> int:
    return compute_f_opt(read_relation(from_clusters(clustering)), max_n)


def verify_sm_cut(graph: SharedMemoryGraph, cut: SmCut) -> bool:
    parts = (cut.B1, cut.B2, cut.S, cut.T)
    total = sum(len(x) for x in parts)
    union = frozenset().union(*parts)
    if total != len(union) or union != frozenset(range(graph.n)):
        return False
    for u, v in graph.edges:
        for a, b in ((u, v), (v, u)):
            if a in cut.S and b in cut.T:
                return False
            if a in cut.B1 and b in cut.T:
                return False
            if a in cut.B2 and b in cut.S:
                return False
    return True


def find_sm_cut(graph: SharedMemoryGraph, f: int, max_n: int = MAX_ENUM_N) -> Optional[SmCut]:
    """SM-cut with |S|, |T| >= n-f, built from a partition witness; None if not f-partitionable."""
    witness = is_f_partitionable(read_relation(from_uniform_mm(graph)), f, max_n)
    if witness is None:
        return None
    S, T = witness.P, witness.Q
    adj = [graph.neighbors(p) for p in range(graph.n)]
    b1 = frozenset().union(*(adj[s] for s in S)) - S if S else frozenset()
    b2 = frozenset().union(*(adj[t] for t in T)) - T if T else frozenset()
    rest = frozenset(range(graph.n)) - S - T - b2
    return SmCut(B1=b1 | rest, B2=b2, S=S, T=T)


def analyze(topology: MixedTopology, max_n: int = MAX_ENUM_N) -> ResilienceReport:
    topology = normalize(topology)
    rel = read_relation(topology)
    f_opt = compute_f_opt(rel, max_n)
    f_maj = compute_f_maj(rel, max_n)
    rho, sigma = compute_rho_sigma(topology)
    params: dict = {}
    if topology.model == "uniform-mm" and topology.graph is not None:
        params["f_G"] = compute_f_g(topology.graph, max_n)
        params["f_mm"] = compute_f_mm(topology.graph, max_n)
    elif topology.model == "cluster" and topology.clustering is not None:
        params["f_cluster"] = compute_f_cluster(topology.clustering, max_n)
    witness = None
    if f_opt + 1 < topology.n:
        witness = is_f_partitionable(rel, f_opt + 1, max_n)
    return ResilienceReport(topology.n, f_opt, f_maj, rho, sigma, topology.model, params, witness)


# --- file format ------------------------------------------------------------

_MODEL_FIELD = {
    "general": "memories",
    "uniform-mm": "edges",
    "general-mm": "domain",
    "cluster": "clusters",
    "pure-mp": None,
}


def _id_list(value, where: str, n: int) -> list:
    if not isinstance(value, list):
        raise TopologyError(f"{where}: expected a list of process ids")
    for j, p in enumerate(value):
        if not isinstance(p, int) or isinstance(p, bool) or not 0 <= p < n:
            raise TopologyError(f"{where}[{j}]: invalid process id {p!r}")
    return value


def parse_topology(doc: dict) -> MixedTopology:
    if not isinstance(doc, dict):
        raise TopologyError("$: expected a JSON object")
    n = doc.get("n")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise TopologyError("$.n: expected a positive integer")
    model = doc.get("model")
    if model not in _MODEL_FIELD:
        raise TopologyError(f"$.model: expected one of {', '.join(MODELS)}")
    wanted = _MODEL_FIELD[model]
    present = [k for k in ("memories", "edges", "domain", "clusters") if k in doc]
    extra = [k for k in present if k != wanted]
    if extra:
        raise TopologyError(f"$.{extra[0]}: not allowed for model {model!r}")
    if wanted is not None and wanted not in doc:
        raise TopologyError(f"$.{wanted}: required for model {model!r}")

    if model == "pure-mp":
        return from_pure_mp(n)
    if model == "general":
        mems = []
        if not isinstance(doc["memories"], list):
            raise TopologyError("$.memories: expected a list")
        for i, m in enumerate(doc["memories"]):
            if not isinstance(m, dict):
                raise TopologyError(f"$.memories[{i}]: expected an object")
            r = _id_list(m.get("readers", []), f"$.memories[{i}].readers", n)
            w = _id_list(m.get("writers", []), f"$.memories[{i}].writers", n)
            if not r and not w:
                raise TopologyError(f"$.memories[{i}]: needs readers or writers")
            mems.append(MemorySpec(frozenset(r), frozenset(w)))
        return from_memories(n, mems)
    if model == "uniform-mm":
        if not isinstance(doc["edges"], list):
            raise TopologyError("$.edges: expected a list")
        edges = []
        for i, e in enumerate(doc["edges"]):
            e = _id_list(e, f"$.edges[{i}]", n)
            if len(e) != 2 or e[0] == e[1]:
                raise TopologyError(f"$.edges[{i}]: expected two distinct ids")
            edges.append(tuple(e))
        return from_uniform_mm(SharedMemoryGraph(n, frozenset(edges)))
    if model == "general-mm":
        if not isinstance(doc["domain"], list):
            raise TopologyError("$.domain: expected a list")
        dom = []
        for i, s in enumerate(doc["domain"]):
            s = _id_list(s, f"$.domain[{i}]", n)
            if not s:
                raise TopologyError(f"$.domain[{i}]: empty set")
            dom.append(frozenset(s))
        return from_general_mm(n, dom)
    if not isinstance(doc["clusters"], list):
        raise TopologyError("$.clusters: expected a list")
    cl = []
    for i, c in enumerate(doc["clusters"]):
        c = _id_list(c, f"$.clusters[{i}]", n)
        if not c:
            raise TopologyError(f"$.clusters[{i}]: empty cluster")
        cl.append(frozenset(c))
    clustering = Clustering(tuple(cl))
    try:
        clustering.validate(n)
    except TopologyError as exc:
        raise TopologyError(f"$.clusters: {exc}") from None
    return from_clusters(clustering, n)


def load_topology(path) -> MixedTopology:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TopologyError(f"{path}: invalid JSON ({exc})") from None
    return parse_topology(doc)


def topology_to_dict(topology: MixedTopology) -> dict:
    doc: dict = {"n": topology.n, "model": topology.model}
    if topology.model == "uniform-mm":
        doc["edges"] = sorted([list(e) for e in topology.graph.edges])
    elif topology.model == "general-mm":
        doc["domain"] = [sorted(s) for s in topology.domain]
    elif topology.model == "cluster":
        doc["clusters"] = [sorted(c) for c in topology.clustering.clusters]
    elif topology.model == "general":
        doc["memories"] = [
            {"readers": sorted(m.readers), "writers": sorted(m.writers)} for m in topology.memories
        ]
    return doc
