"""Graph specification, parameters, pairwise features, and configuration scoring.

A model over K nodes (node 0 is the holistic object, the rest are body
parts) scores a *configuration*: an on/off bitmask over the nodes plus one
scored box hypothesis assigned to each on node.  The score is linear in the
parameters, laid out as one flat vector:

    [ unary weights: K ]
    [ per-edge pairwise weights, edges in lexicographic (i, j) order with
      i < j, 10 entries each: 4 spatial + 6 scale ]
    [ one bias per non-empty on/off mask: 2**K - 1 entries, mask m at
      slot m - 1 ]

so for K = 4 the parameter dimension is 4 + 60 + 15 = 79.  Off nodes
contribute nothing: their unary entries and every pairwise block touching
them are zero in the feature vector.  ``score_configuration`` accumulates
terms in a fixed order (unary by ascending node, then edges in lexicographic
order, then the bias) so that cached evaluation in :mod:`switchdet.inference`
can reproduce scores bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np

from .geometry import Box

NUM_PAIRWISE_FEATURES = 10


@dataclass(frozen=True)
class GraphSpec:
    """Fully connected graph over named nodes; node 0 is the holistic object."""

    node_names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.node_names)
        object.__setattr__(self, "node_names", names)
        if len(names) < 1:
            raise ValueError("a graph needs at least one node")
        if len(set(names)) != len(names):
            raise ValueError(f"node names must be unique, got {names}")

    @property
    def num_nodes(self) -> int:
        return len(self.node_names)

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        k = self.num_nodes
        return tuple((i, j) for i in range(k) for j in range(i + 1, k))

    @property
    def num_edges(self) -> int:
        k = self.num_nodes
        return k * (k - 1) // 2

    @property
    def num_patterns(self) -> int:
        """Number of non-empty on/off masks."""
        return (1 << self.num_nodes) - 1

    @property
    def full_mask(self) -> int:
        return (1 << self.num_nodes) - 1

    @property
    def param_dimension(self) -> int:
        return self.num_nodes + NUM_PAIRWISE_FEATURES * self.num_edges + self.num_patterns

    def edge_index(self, i: int, j: int) -> int:
        if i == j:
            raise ValueError("no self edges")
        if i > j:
            i, j = j, i
        k = self.num_nodes
        if not (0 <= i < j < k):
            raise ValueError(f"edge ({i}, {j}) out of range for {k} nodes")
        # edges (0,1)..(0,k-1), (1,2)..: offset of row i plus column within it
        return i * (2 * k - i - 1) // 2 + (j - i - 1)


@dataclass(frozen=True)
class Hypothesis:
    """A scored candidate box for one node, produced by an external detector."""

    id: int
    node: int
    box: Box
    raw_score: float

    def __post_init__(self):
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "node", int(self.node))
        object.__setattr__(self, "raw_score", float(self.raw_score))
        if self.node < 0:
            raise ValueError(f"node index must be non-negative, got {self.node}")


def pattern_bits(mask: int, num_nodes: int | None = None) -> list[int]:
    """Ascending indices of the on nodes in a mask."""
    if mask < 0:
        raise ValueError(f"mask must be non-negative, got {mask}")
    top = num_nodes if num_nodes is not None else mask.bit_length()
    return [i for i in range(top) if (mask >> i) & 1]


def pattern_index(mask: int, num_nodes: int | None = None) -> int:
    """Slot of a non-empty mask in the bias table: masks 1..2**K-1 map to 0..2**K-2."""
    if mask < 1:
        raise ValueError(f"the all-off mask is not a valid pattern (mask={mask})")
    if num_nodes is not None and mask >= (1 << num_nodes):
        raise ValueError(f"mask {mask:#b} out of range for {num_nodes} nodes")
    return mask - 1


@dataclass(frozen=True)
class Configuration:
    """An on/off mask plus one hypothesis id per on node."""

    pattern: int
    assignment: Mapping[int, int]

    def __post_init__(self):
        object.__setattr__(self, "pattern", int(self.pattern))
        object.__setattr__(
            self, "assignment", {int(k): int(v) for k, v in dict(self.assignment).items()}
        )
        if self.pattern < 1:
            raise ValueError("a configuration needs at least one on node")

    def on_nodes(self) -> list[int]:
        return pattern_bits(self.pattern)

    def sort_key(self) -> tuple[int, tuple[int, ...]]:
        """Deterministic tie-break key: (mask, assigned ids in node order)."""
        return (self.pattern, tuple(self.assignment[i] for i in self.on_nodes()))

    def key(self) -> tuple[int, tuple[tuple[int, int], ...]]:
        """Hashable identity for deduplication."""
        return (self.pattern, tuple(sorted(self.assignment.items())))


class HypothesisStore:
    """Per-image hypothesis container with per-node lists and (node, id) lookup."""

    def __init__(self, num_nodes: int, hypotheses: Iterable[Hypothesis] = ()):
        if num_nodes < 1:
            raise ValueError("store needs at least one node")
        self._num_nodes = int(num_nodes)
        self._by_node: list[list[Hypothesis]] = [[] for _ in range(self._num_nodes)]
        self._index: dict[tuple[int, int], Hypothesis] = {}
        for h in hypotheses:
            self.add(h)

    @property
    def num_nodes(self) -> int:
        return self._num_nodes

    def add(self, hyp: Hypothesis) -> None:
        if not (0 <= hyp.node < self._num_nodes):
            raise ValueError(f"hypothesis node {hyp.node} out of range [0, {self._num_nodes})")
        key = (hyp.node, hyp.id)
        if key in self._index:
            raise ValueError(f"duplicate hypothesis id {hyp.id} for node {hyp.node}")
        self._index[key] = hyp
        self._by_node[hyp.node].append(hyp)

    def node(self, i: int) -> list[Hypothesis]:
        return self._by_node[i]

    def get(self, node: int, hyp_id: int) -> Hypothesis:
        try:
            return self._index[(node, hyp_id)]
        except KeyError:
            raise ValueError(f"no hypothesis with id {hyp_id} for node {node}") from None

    def counts(self) -> list[int]:
        return [len(lst) for lst in self._by_node]

    def __len__(self) -> int:
        return len(self._index)

    def __iter__(self) -> Iterator[Hypothesis]:
        for lst in self._by_node:
            yield from lst


@dataclass(frozen=True)
class ModelParams:
    """Unary weights, per-edge pairwise weights, per-pattern biases.

    ``pairwise_w`` has one 10-entry row per edge, rows in the same
    lexicographic edge order as :attr:`GraphSpec.edges`.
    """

    unary_w: np.ndarray
    pairwise_w: np.ndarray
    pattern_b: np.ndarray
    sigmoid_slope: float = 1.5

    def __post_init__(self):
        unary = np.array(self.unary_w, dtype=float)
        pairwise = np.array(self.pairwise_w, dtype=float)
        pattern = np.array(self.pattern_b, dtype=float)
        if unary.ndim != 1 or unary.size < 1:
            raise ValueError("unary_w must be a non-empty 1-d array")
        k = unary.size
        e = k * (k - 1) // 2
        if pairwise.shape != (e, NUM_PAIRWISE_FEATURES):
            raise ValueError(
                f"pairwise_w must have shape ({e}, {NUM_PAIRWISE_FEATURES}) for "
                f"{k} nodes, got {pairwise.shape}"
            )
        if pattern.shape != ((1 << k) - 1,):
            raise ValueError(
                f"pattern_b must have length {(1 << k) - 1} for {k} nodes, got {pattern.shape}"
            )
        if not self.sigmoid_slope > 0:
            raise ValueError(f"sigmoid_slope must be positive, got {self.sigmoid_slope}")
        for arr in (unary, pairwise, pattern):
            arr.flags.writeable = False
        object.__setattr__(self, "unary_w", unary)
        object.__setattr__(self, "pairwise_w", pairwise)
        object.__setattr__(self, "pattern_b", pattern)
        object.__setattr__(self, "sigmoid_slope", float(self.sigmoid_slope))

    @property
    def num_nodes(self) -> int:
        return self.unary_w.size

    @property
    def dimension(self) -> int:
        return self.unary_w.size + self.pairwise_w.size + self.pattern_b.size

    def validate_for(self, spec: GraphSpec) -> None:
        if self.num_nodes != spec.num_nodes:
            raise ValueError(
                f"parameters are for {self.num_nodes} nodes, graph has {spec.num_nodes}"
            )

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.unary_w, self.pairwise_w.ravel(), self.pattern_b])

    @classmethod
    def zeros(cls, spec: GraphSpec, sigmoid_slope: float = 1.5) -> "ModelParams":
        k = spec.num_nodes
        return cls(
            unary_w=np.zeros(k),
            pairwise_w=np.zeros((spec.num_edges, NUM_PAIRWISE_FEATURES)),
            pattern_b=np.zeros(spec.num_patterns),
            sigmoid_slope=sigmoid_slope,
        )

    @classmethod
    def from_vector(
        cls, spec: GraphSpec, vector: np.ndarray, sigmoid_slope: float = 1.5
    ) -> "ModelParams":
        vec = np.asarray(vector, dtype=float)
        if vec.shape != (spec.param_dimension,):
            raise ValueError(
                f"expected a vector of dimension {spec.param_dimension}, got {vec.shape}"
            )
        k = spec.num_nodes
        e = spec.num_edges
        return cls(
            unary_w=vec[:k],
            pairwise_w=vec[k : k + NUM_PAIRWISE_FEATURES * e].reshape(e, NUM_PAIRWISE_FEATURES),
            pattern_b=vec[k + NUM_PAIRWISE_FEATURES * e :],
            sigmoid_slope=sigmoid_slope,
        )


def normalize_unary(raw: float, slope: float = 1.5) -> float:
    """Sigmoid renormalization 1 / (1 + exp(-slope * raw)) of a raw detector score."""
    if not slope > 0:
        raise ValueError(f"slope must be positive, got {slope}")
    z = slope * float(raw)
    # branch keeps exp() in the underflow-safe regime for large |raw|
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def spatial_features(a: Box, b: Box) -> np.ndarray:
    """[dx, dy, dx^2, dy^2] with displacements normalized by summed sizes per axis."""
    sx = a.width + b.width
    sy = a.height + b.height
    if sx == 0.0 or sy == 0.0:
        raise ValueError("degenerate geometry: combined box size is zero on an axis")
    acx, acy = a.center
    bcx, bcy = b.center
    dx = (bcx - acx) / sx
    dy = (bcy - acy) / sy
    return np.array([dx, dy, dx * dx, dy * dy])


def scale_features(a: Box, b: Box) -> np.ndarray:
    """[ds, ds_x, ds_y, ds^2, ds_x^2, ds_y^2] with ds the area ratio of a over b."""
    if b.width <= 0.0 or b.height <= 0.0:
        raise ValueError("degenerate geometry: zero-size denominator box")
    ds = (a.width * a.height) / (b.width * b.height)
    dsx = a.width / b.width
    dsy = a.height / b.height
    return np.array([ds, dsx, dsy, ds * ds, dsx * dsx, dsy * dsy])


def pairwise_features(a: Box, b: Box) -> np.ndarray:
    """The 10 pairwise features: spatial block followed by scale block."""
    return np.concatenate([spatial_features(a, b), scale_features(a, b)])


def validate_configuration(
    spec: GraphSpec, cfg: Configuration, store: HypothesisStore | None = None
) -> None:
    """Raise ValueError unless cfg is consistent with the graph (and the store)."""
    k = spec.num_nodes
    if not (1 <= cfg.pattern < (1 << k)):
        raise ValueError(f"pattern mask {cfg.pattern} out of range for {k} nodes")
    on = cfg.on_nodes()
    if sorted(cfg.assignment.keys()) != on:
        raise ValueError(
            f"assignment keys {sorted(cfg.assignment.keys())} do not match on nodes {on}"
        )
    if store is not None:
        for i in on:
            store.get(i, cfg.assignment[i])


def feature_vector(
    spec: GraphSpec,
    cfg: Configuration,
    store: HypothesisStore,
    sigmoid_slope: float = 1.5,
) -> np.ndarray:
    """Sparse-by-construction feature vector whose dot with flattened params is the score."""
    validate_configuration(spec, cfg, store)
    phi = np.zeros(spec.param_dimension)
    k = spec.num_nodes
    on = set(cfg.on_nodes())
    boxes: dict[int, Box] = {}
    for i in sorted(on):
        h = store.get(i, cfg.assignment[i])
        phi[i] = normalize_unary(h.raw_score, sigmoid_slope)
        boxes[i] = h.box
    for e, (i, j) in enumerate(spec.edges):
        if i in on and j in on:
            base = k + NUM_PAIRWISE_FEATURES * e
            phi[base : base + NUM_PAIRWISE_FEATURES] = pairwise_features(boxes[i], boxes[j])
    phi[k + NUM_PAIRWISE_FEATURES * spec.num_edges + pattern_index(cfg.pattern, k)] = 1.0
    return phi


def score_configuration(
    params: ModelParams,
    spec: GraphSpec,
    cfg: Configuration,
    store: HypothesisStore,
) -> float:
    """Configuration score: weighted unaries of on nodes, pairwise terms of on
    edges, plus the pattern bias.

    Terms accumulate in the fixed layout order so cached inference can match
    this bit for bit.
    """
    params.validate_for(spec)
    validate_configuration(spec, cfg, store)
    slope = params.sigmoid_slope
    on = cfg.on_nodes()
    on_set = set(on)
    boxes: dict[int, Box] = {}
    total = 0.0
    for i in on:
        h = store.get(i, cfg.assignment[i])
        boxes[i] = h.box
        total += params.unary_w[i] * normalize_unary(h.raw_score, slope)
    for e, (i, j) in enumerate(spec.edges):
        if i in on_set and j in on_set:
            psi = pairwise_features(boxes[i], boxes[j])
            w = params.pairwise_w[e]
            term = 0.0
            for t in range(NUM_PAIRWISE_FEATURES):
                term += w[t] * psi[t]
            total += term
    total += params.pattern_b[cfg.pattern - 1]
    return float(total)
