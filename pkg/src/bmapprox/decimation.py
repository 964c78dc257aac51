"""Decimatable approximating models.

A node with at most two neighbors can be summed out exactly by shifting its
neighbors' parameters and the additive constant; a model that can be reduced
to nothing this way has a log normalizing constant computable in linear
time. On top of that primitive this module provides clamp-based joint
moments, the generalized mean-field fixed point driven by Fisher matrices,
and the expansion surface for a decimatable approximation of an arbitrary
target.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .expansion import TractableSurface
from .meanfield import FixedPointReport
from .model import BoltzmannModel, validate_edges

__all__ = [
    "DecimationStep",
    "DecimationTrace",
    "GeneralizedMFState",
    "elimination_order",
    "decimate_log_z",
    "joint_on_probability",
    "DecimatableMoments",
    "build_structure_model",
    "extended_indices",
    "generalized_mf_iterate",
    "solve_generalized_mf",
    "gmf_stationarity_residuals",
    "decimatable_surface",
]


def _log1pexp(x: float) -> float:
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@dataclass(frozen=True)
class DecimationStep:
    """One elimination: the node, its neighbors, and the exact parameter deltas."""

    node: int
    neighbors: tuple[int, ...]
    bias_deltas: tuple[float, ...]
    coupling_delta: float  # 0.0 unless the node had exactly two neighbors
    constant_delta: float


@dataclass(frozen=True)
class DecimationTrace:
    """Elimination order, per-step updates, and the resulting log Z.

    replay() re-applies the recorded deltas to the original model without
    recomputing any logarithm, reproducing final_log_z bit for bit.
    """

    order: tuple[int, ...]
    steps: tuple[DecimationStep, ...]
    final_log_z: float

    def replay(self, model: BoltzmannModel) -> float:
        bias = {i: float(model.bias[i]) for i in range(model.n)}
        constant = model.constant
        for step in self.steps:
            constant += step.constant_delta
            for j, delta in zip(step.neighbors, step.bias_deltas):
                bias[j] += delta
        return constant


def _greedy_order(neighbors: dict[int, set[int]]) -> list[int] | None:
    """Minimum-degree order with lowest-index tie-break; None if stuck above degree 2."""
    order = []
    while neighbors:
        node = min(neighbors, key=lambda k: (len(neighbors[k]), k))
        nb = sorted(neighbors[node])
        if len(nb) > 2:
            return None
        for j in nb:
            neighbors[j].discard(node)
        if len(nb) == 2:
            a, b = nb
            neighbors[a].add(b)
            neighbors[b].add(a)
        del neighbors[node]
        order.append(node)
    return order


def elimination_order(n: int, edges) -> list[int] | None:
    """Order eliminating every node at degree <= 2, or None if none exists.

    Eliminating a degree-2 node joins its two neighbors, and the greedy
    bookkeeping accounts for that. The result is deterministic: minimum
    current degree first, ties broken by lowest index.
    """
    edges = validate_edges(n, edges)
    neighbors: dict[int, set[int]] = {i: set() for i in range(n)}
    for i, j in edges:
        neighbors[i].add(j)
        neighbors[j].add(i)
    return _greedy_order(neighbors)


def _adjacency(model: BoltzmannModel) -> dict[int, dict[int, float]]:
    adj: dict[int, dict[int, float]] = {i: {} for i in range(model.n)}
    rows, cols = np.nonzero(model.coupling)
    for i, j in zip(rows.tolist(), cols.tolist()):
        if i < j:
            w = float(model.coupling[i, j])
            adj[i][j] = w
            adj[j][i] = w
    return adj


def _decimate_core(bias, adj, constant, order, record):
    """Eliminate nodes in order, mutating bias/adj; returns (log_z, steps).

    bias: dict node -> field; adj: dict node -> dict neighbor -> coupling.
    Raises if a node has more than two neighbors when its turn comes.
    """
    steps = [] if record else None
    for x in order:
        nb = sorted(adj[x])
        if len(nb) > 2:
            raise ValueError(
                f"node {x} has {len(nb)} neighbors at elimination time; "
                "the order violates the degree-2 bound"
            )
        theta_x = bias[x]
        base = _log1pexp(theta_x)
        constant += base
        bias_deltas = []
        coupling_delta = 0.0
        if len(nb) >= 1:
            for j in nb:
                delta = _log1pexp(theta_x + adj[x][j]) - base
                bias[j] += delta
                bias_deltas.append(delta)
        if len(nb) == 2:
            a, b = nb
            coupling_delta = (
                base
                + _log1pexp(theta_x + adj[x][a] + adj[x][b])
                - _log1pexp(theta_x + adj[x][a])
                - _log1pexp(theta_x + adj[x][b])
            )
            adj[a][b] = adj[a].get(b, 0.0) + coupling_delta
            adj[b][a] = adj[a][b]
        for j in nb:
            del adj[j][x]
        del adj[x]
        del bias[x]
        if record:
            steps.append(
                DecimationStep(x, tuple(nb), tuple(bias_deltas), coupling_delta, base)
            )
    return constant, steps


def decimate_log_z(model: BoltzmannModel, order=None) -> DecimationTrace:
    """Exact log Z of a decimatable model via repeated node elimination.

    If no order is given, the greedy minimum-degree order on the model's
    nonzero couplings is used; a model that cannot be reduced that way
    raises. An explicit order must list every node exactly once and respect
    the degree-2 bound at each step.
    """
    n = model.n
    adj = _adjacency(model)
    if order is None:
        structure = {i: set(adj[i]) for i in range(n)}
        order = _greedy_order(structure)
        if order is None:
            raise ValueError("model is not decimatable by degree-<=2 elimination")
    else:
        order = [int(i) for i in order]
        if sorted(order) != list(range(n)):
            raise ValueError("order must list every node exactly once")
    bias = {i: float(model.bias[i]) for i in range(n)}
    log_z, steps = _decimate_core(bias, adj, model.constant, order, record=True)
    return DecimationTrace(tuple(order), tuple(steps), log_z)


def _compile_clamp_program(n, structure, clamp):
    """Precompute everything structural about clamping a node set and decimating.

    The returned program is a flat recipe (node positions, coupling slots,
    elimination steps) valid for any parameter values on the structure,
    since eliminating at most degree-2 nodes is a purely structural matter.
    Returns None if the clamped structure is not decimatable.
    """
    remaining = [i for i in range(n) if i not in clamp]
    pos = {node: k for k, node in enumerate(remaining)}
    const_bias = sorted(clamp)
    const_edges = []
    fold = [[] for _ in remaining]
    init_slots = []
    slot_of = {}
    for e, (i, j) in enumerate(structure):
        ci, cj = i in clamp, j in clamp
        if ci and cj:
            const_edges.append(e)
        elif ci:
            fold[pos[j]].append(e)
        elif cj:
            fold[pos[i]].append(e)
        else:
            slot_of[(i, j)] = len(slot_of)
            init_slots.append((slot_of[(i, j)], e))

    neighbors = {i: set() for i in remaining}
    for i, j in structure:
        if i in pos and j in pos:
            neighbors[i].add(j)
            neighbors[j].add(i)
    steps = []
    while neighbors:
        x = min(neighbors, key=lambda k: (len(neighbors[k]), k))
        nb = sorted(neighbors[x])
        if len(nb) > 2:
            return None
        nb_slots = [slot_of[(min(x, y), max(x, y))] for y in nb]
        pair_slot = -1
        if len(nb) == 2:
            a, b = nb
            key = (min(a, b), max(a, b))
            if key not in slot_of:
                slot_of[key] = len(slot_of)
            pair_slot = slot_of[key]
            neighbors[a].add(b)
            neighbors[b].add(a)
        for y in nb:
            neighbors[y].discard(x)
        del neighbors[x]
        steps.append((pos[x], [pos[y] for y in nb], nb_slots, pair_slot))
    return remaining, const_bias, const_edges, fold, init_slots, len(slot_of), steps


def _run_clamp_program(program, bias, edge_values, constant):
    """Execute a compiled clamp-and-decimate recipe; returns the clamped log Z."""
    remaining, const_bias, const_edges, fold, init_slots, n_slots, steps = program
    log1p = math.log1p
    exp = math.exp
    for i in const_bias:
        constant += bias[i]
    for e in const_edges:
        constant += edge_values[e]
    wb = [bias[i] for i in remaining]
    for k, folded in enumerate(fold):
        for e in folded:
            wb[k] += edge_values[e]
    ws = [0.0] * n_slots
    for slot, e in init_slots:
        ws[slot] = edge_values[e]
    for xp, nb_pos, nb_slots, pair_slot in steps:
        tx = wb[xp]
        base = tx + log1p(exp(-tx)) if tx > 0.0 else log1p(exp(tx))
        constant += base
        if nb_pos:
            if len(nb_pos) == 1:
                t = tx + ws[nb_slots[0]]
                la = t + log1p(exp(-t)) if t > 0.0 else log1p(exp(t))
                wb[nb_pos[0]] += la - base
            else:
                ta = tx + ws[nb_slots[0]]
                tb = tx + ws[nb_slots[1]]
                tab = ta + ws[nb_slots[1]]
                la = ta + log1p(exp(-ta)) if ta > 0.0 else log1p(exp(ta))
                lb = tb + log1p(exp(-tb)) if tb > 0.0 else log1p(exp(tb))
                lab = tab + log1p(exp(-tab)) if tab > 0.0 else log1p(exp(tab))
                wb[nb_pos[0]] += la - base
                wb[nb_pos[1]] += lb - base
                ws[pair_slot] += base + lab - la - lb
    return constant


class DecimatableMoments:
    """Joint on-probabilities of a decimatable model via clamp-and-decimate.

    Each query clamps a node set to one, decimates the reduced model, and
    exponentiates the log Z difference. Results are cached per node set, and
    the structural part of each clamp (elimination order, parameter slots)
    is compiled once and reusable for any parameter values; callers that
    rebuild this object with new parameters on a fixed structure (the
    generalized mean-field loop) should share a program_cache dict across
    instances. Pass ``structure`` when couplings may be exactly zero on
    structural edges so the compiled programs stay valid for all values.
    """

    def __init__(
        self,
        model: BoltzmannModel,
        log_z: float | None = None,
        structure=None,
        program_cache: dict | None = None,
    ):
        self.model = model
        self._bias = [float(b) for b in model.bias]
        if structure is None:
            rows, cols = np.nonzero(model.coupling)
            self._structure = tuple(
                (i, j) for i, j in zip(rows.tolist(), cols.tolist()) if i < j
            )
        else:
            self._structure = tuple(sorted(tuple(e) for e in structure))
        self._edge_values = [float(model.coupling[i, j]) for i, j in self._structure]
        self._programs = {} if program_cache is None else program_cache
        self._constant = model.constant
        self.log_z = self._clamped_log_z(frozenset()) if log_z is None else float(log_z)
        self._cache: dict[frozenset, float] = {frozenset(): 1.0}

    def _clamped_log_z(self, clamp: frozenset) -> float:
        program = self._programs.get(clamp)
        if program is None:
            program = _compile_clamp_program(self.model.n, self._structure, clamp)
            if program is None:
                raise ValueError("clamped model is not decimatable")
            self._programs[clamp] = program
        return _run_clamp_program(program, self._bias, self._edge_values, self._constant)

    def joint(self, nodes) -> float:
        """Probability that every node in the set is 1 under this model."""
        key = nodes if type(nodes) is frozenset else frozenset(int(i) for i in nodes)
        value = self._cache.get(key)
        if value is None:
            for i in key:
                if not 0 <= i < self.model.n:
                    raise ValueError(f"node {i} out of range")
            value = math.exp(self._clamped_log_z(key) - self.log_z)
            self._cache[key] = value
        return value


def joint_on_probability(model: BoltzmannModel, nodes, log_z: float | None = None) -> float:
    """Q(s_i = 1 for all i in nodes) for a decimatable model.

    Accepts at most four nodes, which covers every Fisher-matrix entry of a
    pairwise tractable structure. Clamping only removes nodes, so the
    reduced model is always still decimatable. Pass the model's
    precomputed log Z to skip recomputing it.
    """
    nodes = sorted({int(i) for i in nodes})
    if len(nodes) > 4:
        raise ValueError("at most four nodes are supported")
    return DecimatableMoments(model, log_z).joint(nodes)


def extended_indices(n: int, edges) -> tuple[tuple[int, ...], ...]:
    """Singles for every node followed by the structure's sorted pairs."""
    return tuple((i,) for i in range(n)) + tuple(tuple(e) for e in sorted(edges))


def build_structure_model(n: int, edges, theta) -> BoltzmannModel:
    """Model with parameters theta laid out as extended_indices(n, edges)."""
    edges = tuple(sorted(edges))
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (n + len(edges),):
        raise ValueError(f"theta must have length {n + len(edges)}")
    coupling = np.zeros((n, n))
    for (i, j), value in zip(edges, theta[n:]):
        coupling[i, j] = value
        coupling[j, i] = value
    return BoltzmannModel(theta[:n], coupling)


@dataclass(frozen=True)
class GeneralizedMFState:
    """Converged (or abandoned) generalized mean-field approximation.

    theta is indexed by ``indices`` (singles then structure pairs); fisher is
    the structure-restricted covariance matrix of the extended index
    variables at the final parameters.
    """

    structure: tuple[tuple[int, int], ...]
    indices: tuple[tuple[int, ...], ...]
    theta: np.ndarray
    fisher: np.ndarray
    report: FixedPointReport


def _target_terms(target: BoltzmannModel):
    terms = [((i,), float(target.bias[i])) for i in range(target.n) if target.bias[i] != 0.0]
    rows, cols = np.nonzero(target.coupling)
    for i, j in zip(rows.tolist(), cols.tolist()):
        if i < j:
            terms.append(((i, j), float(target.coupling[i, j])))
    return terms


class _GmfPlan:
    """Fixed-structure bookkeeping for the generalized mean-field iteration.

    Every update needs the same collection of joint on-probabilities (the
    unions behind the Fisher matrix and the target covariances); this plan
    resolves those set unions to integer positions once, so each iteration
    is just one clamp-and-decimate per unique node set plus array filling.
    """

    def __init__(self, target: BoltzmannModel, edges):
        self.n = target.n
        self.edges = tuple(sorted(edges))
        self.indices = extended_indices(self.n, self.edges)
        sets = [frozenset(idx) for idx in self.indices]
        k = len(sets)
        keys: list[frozenset] = []
        position: dict[frozenset, int] = {}

        def pos(key):
            p = position.get(key)
            if p is None:
                p = len(keys)
                position[key] = p
                keys.append(key)
            return p

        self.index_pos = np.array([pos(s) for s in sets])
        self.fisher_pos = np.empty((k, k), dtype=np.intp)
        for a in range(k):
            for b in range(k):
                self.fisher_pos[a, b] = pos(sets[a] | sets[b])
        terms = _target_terms(target)
        self.weights = np.array([w for _, w in terms])
        self.term_pos = np.array([pos(frozenset(key)) for key, _ in terms], dtype=np.intp)
        self.rhs_pos = np.empty((k, len(terms)), dtype=np.intp)
        for a in range(k):
            for t, (key, _) in enumerate(terms):
                self.rhs_pos[a, t] = pos(sets[a] | frozenset(key))
        self.keys = keys
        self.program_cache: dict = {}

    def iterate(self, theta, ridge):
        q0 = build_structure_model(self.n, self.edges, theta)
        moments = DecimatableMoments(
            q0, structure=self.edges, program_cache=self.program_cache
        )
        values = np.array([moments.joint(key) for key in self.keys])
        m = values[self.index_pos]
        fisher = values[self.fisher_pos] - np.outer(m, m)
        m_terms = values[self.term_pos]
        rhs = (values[self.rhs_pos] - np.outer(m, m_terms)) @ self.weights
        system = fisher + ridge * np.eye(len(m)) if ridge else fisher
        return np.linalg.solve(system, rhs), fisher


def generalized_mf_iterate(
    target: BoltzmannModel,
    edges,
    theta,
    ridge: float = 0.0,
    plan: _GmfPlan | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One synchronous update theta <- F_psi_psi^{-1} Cov(s_J, H1).

    Moments come from clamp-and-decimate queries on the current tractable
    model. Returns the proposed parameters and the Fisher matrix used.
    """
    if plan is None:
        plan = _GmfPlan(target, edges)
    return plan.iterate(np.asarray(theta, dtype=np.float64), ridge)


def solve_generalized_mf(
    target: BoltzmannModel,
    structure,
    init=None,
    schedule: str = "sync",
    damping: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    ridge: float = 1e-10,
) -> GeneralizedMFState:
    """Fit a decimatable model on the given edge structure to the target.

    Iterates the Fisher-matrix fixed point until the largest parameter
    change drops to tol. The default init copies the target's parameters on
    the structure, which is exact when the off-structure couplings vanish.
    The ridge stabilizes the solve when saturated means drive Fisher entries
    toward zero; a singular solve despite it is reported as non-convergence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if schedule not in ("sync", "async"):
        raise ValueError(f"unknown schedule {schedule!r}")
    n = target.n
    edges = validate_edges(n, structure)
    if elimination_order(n, edges) is None:
        raise ValueError("structure is not decimatable")
    indices = extended_indices(n, edges)
    if init is None:
        theta = np.array(
            [float(target.bias[i]) for i in range(n)]
            + [float(target.coupling[i, j]) for i, j in edges]
        )
    else:
        theta = np.array(init, dtype=np.float64)
        if theta.shape != (len(indices),):
            raise ValueError(f"init must have length {len(indices)}")

    fisher = np.zeros((len(indices), len(indices)))
    plan = _GmfPlan(target, edges)
    converged = False
    residual = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        try:
            if schedule == "sync":
                proposal, fisher = plan.iterate(theta, ridge)
                theta_new = theta + damping * (proposal - theta)
            else:  # async: refresh moments for every single-coordinate solve
                theta_new = np.array(theta)
                for a in range(len(indices)):
                    proposal, fisher = plan.iterate(theta_new, ridge)
                    theta_new[a] += damping * (proposal[a] - theta_new[a])
        except np.linalg.LinAlgError:
            break
        residual = float(np.max(np.abs(theta_new - theta)))
        theta = theta_new
        if residual <= tol:
            converged = True
            break
    report = FixedPointReport(None, converged, iterations, residual, "bound")
    return GeneralizedMFState(edges, indices, theta, fisher, report)


def gmf_stationarity_residuals(target: BoltzmannModel, state: GeneralizedMFState) -> np.ndarray:
    """Per-parameter covariance of H1 - H0 with s_J; zero at a fixed point."""
    q0 = build_structure_model(target.n, state.structure, state.theta)
    moments = DecimatableMoments(q0, structure=state.structure)
    coeffs = _delta_coefficients(target, state)
    sets = [frozenset(idx) for idx in state.indices]
    m = np.array([moments.joint(s) for s in sets])
    residuals = np.zeros(len(sets))
    for key, weight in coeffs.items():
        s_key = frozenset(key)
        m_key = moments.joint(s_key)
        for a in range(len(sets)):
            residuals[a] += weight * (moments.joint(sets[a] | s_key) - m[a] * m_key)
    return residuals


def _delta_coefficients(target: BoltzmannModel, state: GeneralizedMFState) -> dict:
    """Coefficients of H1 - H0 over extended indices (the constant excluded)."""
    coeffs: dict[tuple[int, ...], float] = {}
    for key, weight in _target_terms(target):
        coeffs[key] = coeffs.get(key, 0.0) + weight
    for idx, value in zip(state.indices, state.theta):
        coeffs[idx] = coeffs.get(idx, 0.0) - float(value)
    return {k: v for k, v in coeffs.items() if v != 0.0}


def decimatable_surface(target: BoltzmannModel, state: GeneralizedMFState) -> TractableSurface:
    """Expansion surface of a fitted decimatable approximation.

    H1 - H0 is a linear combination of extended-index variables; its mean and
    variance come from joint on-probabilities of at most four nodes.
    """
    if not state.report.converged:
        warnings.warn(
            "generalized mean-field state did not converge; surface moments use "
            "the final parameters anyway",
            stacklevel=2,
        )
    q0 = build_structure_model(target.n, state.structure, state.theta)
    moments = DecimatableMoments(q0, structure=state.structure)
    coeffs = _delta_coefficients(target, state)
    keys = sorted(coeffs)
    sets = [frozenset(k) for k in keys]
    values = np.array([coeffs[k] for k in keys])
    first = np.array([moments.joint(s) for s in sets])
    mean = target.constant + float(values @ first)
    var = 0.0
    for a in range(len(keys)):
        row = 0.0
        for b in range(a + 1, len(keys)):
            row += values[b] * (moments.joint(sets[a] | sets[b]) - first[a] * first[b])
        var += values[a] * (2.0 * row + values[a] * (first[a] - first[a] ** 2))
    return TractableSurface(moments.log_z, mean, var)
