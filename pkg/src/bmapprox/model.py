"""Core Boltzmann machine types: construction, seeded generation, clamping, file formats.

A model over n binary nodes s_i in {0, 1} is defined by the potential

    c + sum_i b_i s_i + (1/2) sum_{i,j} w_ij s_i s_j

with a symmetric, zero-diagonal coupling matrix, so the half double-sum
counts each unordered pair exactly once. The transforms below (clamping,
conditioning) are exact: they return a smaller model whose log normalizing
constant equals the corresponding partial sum over states of the original.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "BoltzmannModel",
    "PatternSet",
    "ModelFormatError",
    "potential",
    "random_model",
    "full_edges",
    "chain_edges",
    "validate_edges",
    "clamp_to_one",
    "condition_on_visibles",
    "save_model",
    "load_model",
    "save_patterns",
    "load_patterns",
    "load_structure",
]


class ModelFormatError(ValueError):
    """A .bmtx or .pat file failed to parse; the message names the offending line."""


def _frozen_array(values, dtype=np.float64):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BoltzmannModel:
    """Immutable pairwise binary model.

    Attributes:
        bias: length-n per-node field terms.
        coupling: n x n symmetric matrix with zero diagonal.
        constant: additive offset of the potential (lets node-removal
            transforms stay closed over this type).
        parent_index: for models produced by node removal, the original
            index of each surviving node, in ascending original order;
            None for models built directly.
    """

    bias: np.ndarray
    coupling: np.ndarray
    constant: float = 0.0
    parent_index: tuple[int, ...] | None = None

    def __post_init__(self):
        bias = _frozen_array(self.bias)
        coupling = _frozen_array(self.coupling)
        if bias.ndim != 1:
            raise ValueError("bias must be one-dimensional")
        n = bias.shape[0]
        if coupling.shape != (n, n):
            raise ValueError(f"coupling must have shape ({n}, {n}), got {coupling.shape}")
        if not np.array_equal(coupling, coupling.T):
            raise ValueError("coupling matrix must be symmetric")
        if n and np.any(np.diagonal(coupling) != 0.0):
            raise ValueError("coupling diagonal must be zero")
        if self.parent_index is not None and len(self.parent_index) != n:
            raise ValueError("parent_index length must equal the node count")
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "coupling", coupling)
        object.__setattr__(self, "constant", float(self.constant))

    @property
    def n(self) -> int:
        return self.bias.shape[0]


@dataclass(frozen=True)
class PatternSet:
    """A set of binary patterns over the visible nodes (repetitions allowed)."""

    visible_count: int
    patterns: np.ndarray  # (num_patterns, visible_count), entries 0/1

    def __post_init__(self):
        patterns = np.array(self.patterns, dtype=np.int64)
        if patterns.ndim != 2 or patterns.shape[1] != self.visible_count:
            raise ValueError(
                f"patterns must have shape (p, {self.visible_count}), got {patterns.shape}"
            )
        if patterns.size and not np.all((patterns == 0) | (patterns == 1)):
            raise ValueError("pattern entries must be 0 or 1")
        patterns.setflags(write=False)
        object.__setattr__(self, "patterns", patterns)

    def __len__(self) -> int:
        return self.patterns.shape[0]


def as_state(s, n: int) -> np.ndarray:
    """Validate a binary state vector of length n and return it as float64."""
    arr = np.asarray(s, dtype=np.float64)
    if arr.shape != (n,):
        raise ValueError(f"state must have length {n}, got shape {arr.shape}")
    if arr.size and not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError("state entries must be exactly 0 or 1")
    return arr


def potential(model: BoltzmannModel, s) -> float:
    """Evaluate c + sum_i b_i s_i + (1/2) sum_ij w_ij s_i s_j at a binary state."""
    state = as_state(s, model.n)
    return model.constant + float(model.bias @ state) + 0.5 * float(
        state @ model.coupling @ state
    )


def full_edges(n: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, j) for i in range(n) for j in range(i + 1, n))


def chain_edges(n: int) -> tuple[tuple[int, int], ...]:
    return tuple((i, i + 1) for i in range(n - 1))


def validate_edges(n: int, edges) -> tuple[tuple[int, int], ...]:
    """Canonicalize an edge list to sorted (i < j) pairs, rejecting bad input."""
    seen = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i == j:
            raise ValueError(f"self-loop edge ({i}, {j})")
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i}, {j}) out of range for {n} nodes")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ValueError(f"duplicate edge {key}")
        seen.add(key)
    return tuple(sorted(seen))


def random_model(
    n: int,
    topology: str = "full",
    sigma: float = 1.0,
    seed: int = 0,
    edges=None,
) -> BoltzmannModel:
    """Draw a model with Normal(0, sigma^2) parameters on the given topology.

    Biases are drawn for every node; couplings only on the topology's edges.
    The generator is numpy's default PCG64 seeded with ``seed``, and the draw
    order is fixed (all biases first, then edges in sorted (i, j) order), so
    a given seed yields a bit-identical model.

    topology is one of "full", "chain", or "custom"; the latter requires an
    explicit ``edges`` list of index pairs.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if topology == "full":
        edge_list = full_edges(n)
    elif topology == "chain":
        edge_list = chain_edges(n)
    elif topology == "custom":
        if edges is None:
            raise ValueError("custom topology requires an edge list")
        edge_list = validate_edges(n, edges)
    else:
        raise ValueError(f"unknown topology {topology!r}")
    rng = np.random.default_rng(seed)
    bias = rng.normal(0.0, sigma, n)
    coupling = np.zeros((n, n))
    if edge_list:
        values = rng.normal(0.0, sigma, len(edge_list))
        for (i, j), v in zip(edge_list, values):
            coupling[i, j] = v
            coupling[j, i] = v
    return BoltzmannModel(bias, coupling)


def _assign_and_drop(model: BoltzmannModel, nodes, values) -> BoltzmannModel:
    """Fix the given nodes at binary values, fold their terms, and drop them.

    Remaining nodes are renumbered in ascending original order; the result's
    parent_index maps back to the original labels.
    """
    nodes = [int(i) for i in nodes]
    if len(set(nodes)) != len(nodes):
        raise ValueError("nodes must be distinct")
    for i in nodes:
        if not 0 <= i < model.n:
            raise ValueError(f"node {i} out of range for {model.n} nodes")
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(nodes),):
        raise ValueError("values must have one entry per node")
    if values.size and not np.all((values == 0.0) | (values == 1.0)):
        raise ValueError("values must be exactly 0 or 1")

    assigned = np.zeros(model.n)
    assigned[nodes] = values
    keep = sorted(set(range(model.n)) - set(nodes))
    constant = (
        model.constant
        + float(model.bias @ assigned)
        + 0.5 * float(assigned @ model.coupling @ assigned)
    )
    bias = (model.bias + model.coupling @ assigned)[keep]
    coupling = model.coupling[np.ix_(keep, keep)]
    parent = model.parent_index or tuple(range(model.n))
    return BoltzmannModel(bias, coupling, constant, tuple(parent[k] for k in keep))


def clamp_to_one(model: BoltzmannModel, nodes) -> BoltzmannModel:
    """Fix each node in ``nodes`` at s_i = 1 and return the reduced model.

    The reduced model satisfies log Z(reduced) = log of the partial sum of
    exp(potential) over all states with the clamped nodes at 1. Clamping all
    nodes yields a zero-node model whose log Z is its constant.
    """
    nodes = sorted({int(i) for i in nodes})
    return _assign_and_drop(model, nodes, np.ones(len(nodes)))


def condition_on_visibles(model: BoltzmannModel, visible, values) -> BoltzmannModel:
    """Fix the visible nodes at the given binary values; return the hidden subnetwork.

    The returned model's normalized distribution equals the conditional of
    the original given the visible assignment, and its log Z equals the log
    partial sum over hidden states at that assignment.
    """
    return _assign_and_drop(model, list(visible), values)


# ---------------------------------------------------------------------------
# File formats
#
# .bmtx (text, UTF-8, line based): '#' comments and blank lines are skipped;
# header "bm <N>"; records "b <i> <float>", "w <i> <j> <float>" (i != j, each
# unordered pair at most once), optional single "c <float>". Unspecified
# parameters default to 0. Floats carry 17 significant digits so a round
# trip is bit-exact.
#
# .pat: header "pat <N_V>", then one pattern per line as N_V 0/1 tokens.
# ---------------------------------------------------------------------------


def _fmt17(x: float) -> str:
    return format(float(x), ".17g")


def save_model(model: BoltzmannModel, path) -> None:
    """Write a model as .bmtx text; only nonzero parameters are emitted."""
    lines = [f"bm {model.n}"]
    for i in range(model.n):
        if model.bias[i] != 0.0:
            lines.append(f"b {i} {_fmt17(model.bias[i])}")
    for i in range(model.n):
        for j in range(i + 1, model.n):
            if model.coupling[i, j] != 0.0:
                lines.append(f"w {i} {j} {_fmt17(model.coupling[i, j])}")
    if model.constant != 0.0:
        lines.append(f"c {_fmt17(model.constant)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _parse_bmtx(path):
    """Parse .bmtx text into (n, bias records, coupling records, constant)."""
    n = None
    bias = {}
    pairs = {}
    constant = None

    def fail(lineno, message):
        raise ModelFormatError(f"{path}: line {lineno}: {message}")

    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        kind = tokens[0]
        if n is None:
            if kind != "bm" or len(tokens) != 2:
                fail(lineno, "expected header 'bm <N>'")
            try:
                n = int(tokens[1])
            except ValueError:
                fail(lineno, f"bad node count {tokens[1]!r}")
            if n < 0:
                fail(lineno, "node count must be >= 0")
            continue
        if kind == "b":
            if len(tokens) != 3:
                fail(lineno, "expected 'b <i> <float>'")
            try:
                i, v = int(tokens[1]), float(tokens[2])
            except ValueError:
                fail(lineno, "bad bias record")
            if not 0 <= i < n:
                fail(lineno, f"node {i} out of range")
            if i in bias:
                fail(lineno, f"duplicate bias for node {i}")
            bias[i] = v
        elif kind == "w":
            if len(tokens) != 4:
                fail(lineno, "expected 'w <i> <j> <float>'")
            try:
                i, j, v = int(tokens[1]), int(tokens[2]), float(tokens[3])
            except ValueError:
                fail(lineno, "bad coupling record")
            if i == j:
                fail(lineno, "coupling must join distinct nodes")
            if not (0 <= i < n and 0 <= j < n):
                fail(lineno, f"pair ({i}, {j}) out of range")
            key = (min(i, j), max(i, j))
            if key in pairs:
                fail(lineno, f"duplicate coupling for pair {key}")
            pairs[key] = v
        elif kind == "c":
            if len(tokens) != 2:
                fail(lineno, "expected 'c <float>'")
            if constant is not None:
                fail(lineno, "duplicate constant record")
            try:
                constant = float(tokens[1])
            except ValueError:
                fail(lineno, "bad constant record")
        elif kind == "bm":
            fail(lineno, "duplicate header")
        else:
            fail(lineno, f"unknown record type {kind!r}")
    if n is None:
        raise ModelFormatError(f"{path}: missing 'bm <N>' header")
    return n, bias, pairs, 0.0 if constant is None else constant


def load_model(path) -> BoltzmannModel:
    """Read a .bmtx file; unspecified parameters are zero."""
    n, bias_records, pair_records, constant = _parse_bmtx(path)
    bias = np.zeros(n)
    for i, v in bias_records.items():
        bias[i] = v
    coupling = np.zeros((n, n))
    for (i, j), v in pair_records.items():
        coupling[i, j] = v
        coupling[j, i] = v
    return BoltzmannModel(bias, coupling, constant)


def load_structure(path) -> tuple[int, tuple[tuple[int, int], ...]]:
    """Read the edge set of a .bmtx file, ignoring parameter values.

    Structure files reuse the .bmtx syntax with zero-valued placeholders.
    """
    n, _, pair_records, _ = _parse_bmtx(path)
    return n, tuple(sorted(pair_records))


def save_patterns(patterns: PatternSet, path) -> None:
    lines = [f"pat {patterns.visible_count}"]
    for row in patterns.patterns:
        lines.append(" ".join(str(int(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_patterns(path) -> PatternSet:
    """Read a .pat file."""
    header = None
    rows = []

    def fail(lineno, message):
        raise ModelFormatError(f"{path}: line {lineno}: {message}")

    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if header is None:
            if tokens[0] != "pat" or len(tokens) != 2:
                fail(lineno, "expected header 'pat <N_V>'")
            try:
                header = int(tokens[1])
            except ValueError:
                fail(lineno, f"bad visible count {tokens[1]!r}")
            if header < 1:
                fail(lineno, "visible count must be >= 1")
            continue
        if len(tokens) != header:
            fail(lineno, f"expected {header} tokens, got {len(tokens)}")
        if any(t not in ("0", "1") for t in tokens):
            fail(lineno, "pattern entries must be 0 or 1")
        rows.append([int(t) for t in tokens])
    if header is None:
        raise ModelFormatError(f"{path}: missing 'pat <N_V>' header")
    return PatternSet(header, np.array(rows, dtype=np.int64).reshape(len(rows), header))
