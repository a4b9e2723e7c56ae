"""Dynamic-programming solvers: tabular value iteration, the belief-grid MDP,
the full-information relaxation bound and the probability-matching heuristic.

Value iteration runs in *delta form*: it carries the Q-table and updates it by
``beta * P d_n`` where ``d_n = v_{n+1} - v_n``. Each new delta is computed from
the Q increments at the old and new minimizers, so the residual sequence obeys
``||d_{n+1}|| <= beta ||d_n||`` up to a few ulps of the residual itself rather
than of the values.

The inventory MDPs share a post-decision structure: once an order-up-to level
``a`` is chosen, the cost and successor distribution no longer depend on the
pre-order position. :class:`InventoryDp` stores one cost row per "information
index" (grid point, latent state or observation) and one sparse matrix per
demand value; :meth:`InventoryDp.to_tabular` expands it into a plain
:class:`TabularMdp` for small instances.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .belief_grid import BeliefGrid, nearest_grid_points
from .hmm import InvalidArgumentError, NonConvergenceError, as_belief
from .inventory import (
    InventoryModel,
    newsvendor_costs,
    posterior_table,
    tau_demand_matrix,
)

log = logging.getLogger(__name__)

TIE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with ``cost[s, a]`` (``inf`` marks infeasible actions) and
    ``transition`` as a sparse ``(n_states * n_actions, n_states)`` matrix."""

    cost: np.ndarray
    transition: sp.csr_matrix
    beta: float
    action_labels: np.ndarray | None = None

    def __post_init__(self):
        cost = np.asarray(self.cost, dtype=float)
        if cost.ndim != 2:
            raise InvalidArgumentError("cost must be (n_states, n_actions)")
        S, A = cost.shape
        P = sp.csr_matrix(self.transition, dtype=float)
        if P.shape != (S * A, S):
            raise InvalidArgumentError(f"transition shape {P.shape} != {(S * A, S)}")
        if not 0 <= self.beta < 1:
            raise InvalidArgumentError("beta must lie in [0, 1)")
        feasible = np.isfinite(cost)
        if not feasible.any(axis=1).all():
            raise InvalidArgumentError("every state needs a feasible action")
        if np.any(np.isnan(cost)) or np.any(cost == -np.inf):
            raise InvalidArgumentError("costs must be finite or +inf")
        sums = np.asarray(P.sum(axis=1)).reshape(S, A)
        if np.any(np.abs(sums[feasible] - 1.0) > 1e-9) or P.data.min(initial=0.0) < 0:
            raise InvalidArgumentError("feasible transition rows must be probability vectors")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "transition", P)

    @property
    def n_states(self) -> int:
        return self.cost.shape[0]

    @property
    def n_actions(self) -> int:
        return self.cost.shape[1]

    def feasible_actions(self, state: int) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.cost[state]))

    def _operator(self):
        S, A = self.cost.shape
        P = self.transition

        def apply_p(v):
            return (P @ v).reshape(S, A)

        def reduce(F, tie_tol=0.0):
            best = F.min(axis=1)
            if tie_tol:
                arg = np.argmax(F <= (best + tie_tol * np.maximum(1.0, np.abs(best)))[:, None], axis=1)
            else:
                arg = F.argmin(axis=1)
            return best, np.arange(S) * A + arg

        return self.cost, apply_p, reduce, S


@dataclass
class ValueIterationResult:
    values: np.ndarray
    policy: np.ndarray
    residuals: list
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.residuals)


def _delta_iteration(cost, apply_p, reduce, n_states, beta, tol, max_iters, v0=None):
    v = np.zeros(n_states) if v0 is None else np.asarray(v0, dtype=float).copy()
    F = cost + beta * apply_p(v)
    m, arg = reduce(F)
    d = m - v
    residuals = [float(np.abs(d).max())]
    while residuals[-1] > tol and len(residuals) < max_iters:
        v = v + d
        dF = beta * apply_p(d)
        F = F + dF
        m_new, arg_new = reduce(F)
        flat = dF.reshape(-1)
        lo = flat[arg_new]
        hi = flat[arg]
        d = np.minimum(np.maximum(m_new - m, np.minimum(lo, hi)), np.maximum(lo, hi))
        m, arg = m_new, arg_new
        residuals.append(float(np.abs(d).max()))
    v = v + d
    converged = residuals[-1] <= tol
    _, pol = reduce(cost + beta * apply_p(v), TIE_TOL)
    return v, pol, residuals, converged


def value_iteration(mdp, tol: float = 1e-8, max_iters: int = 100_000, strict: bool = False) -> ValueIterationResult:
    """Iterate the Bellman operator until the sup-norm residual is at most ``tol``.

    Works on a :class:`TabularMdp` or an :class:`InventoryDp`. The policy is
    greedy with respect to the returned values, smallest action on ties. When
    ``max_iters`` runs out the result has ``converged=False``, or
    :class:`NonConvergenceError` is raised if ``strict``.
    """
    if not 0 <= mdp.beta < 1:
        raise InvalidArgumentError("beta must lie in [0, 1)")
    cost, apply_p, reduce, n = mdp._operator()
    v, pol, res, ok = _delta_iteration(cost, apply_p, reduce, n, mdp.beta, tol, max_iters)
    if not ok:
        log.warning("value iteration stopped after %d iterations with residual %.3g", len(res), res[-1])
        if strict:
            raise NonConvergenceError(f"residual {res[-1]:.3g} > tol {tol:.3g} after {len(res)} iterations")
    return ValueIterationResult(v, mdp.decode_policy(pol) if hasattr(mdp, "decode_policy") else pol % mdp.n_actions, res, ok)


def policy_evaluation(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Exact value of a stationary deterministic policy (action indices) by a linear solve."""
    S, A = mdp.cost.shape
    rows = np.arange(S) * A + np.asarray(policy)
    P = mdp.transition[rows].toarray()
    c = mdp.cost[np.arange(S), policy]
    return np.linalg.solve(np.eye(S) - mdp.beta * P, c)


# -- inventory MDPs ----------------------------------------------------


def default_position_range(inv: InventoryModel) -> tuple[int, int]:
    delta = inv.delta
    ymax = int(inv.hmm.y_support.max())
    return int(delta.min() - max(inv.tau, 1) * ymax), int(delta.max())


class FactoredMatrix:
    """Sparse-row low-rank matrix: row ``rows[k]`` is ``left[k] @ right``, other rows are zero.

    Used for successor-observation distributions, which are linear in the
    posterior and so have rank at most the number of latent states.
    """

    def __init__(self, n_rows: int, rows, left, right):
        self.rows = np.asarray(rows, dtype=int)
        self.left = np.asarray(left, dtype=float)
        self.right = np.asarray(right, dtype=float)
        self.shape = (int(n_rows), self.right.shape[1])

    def __matmul__(self, V):
        out = np.zeros((self.shape[0],) + np.shape(V)[1:])
        out[self.rows] = self.left @ (self.right @ V)
        return out

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows] = self.left @ self.right
        return out

    def tocsr(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.toarray())

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.left @ self.right))


@dataclass(frozen=True, eq=False)
class InventoryDp:
    """Post-decision inventory MDP over ``positions x info`` states.

    ``cost[i, k]`` is the one-period cost of ordering up to ``positions[k]``
    under information index ``i``; ``moves`` lists ``(y, W_y)`` where
    ``W_y[i, j]`` is the probability of demand ``y`` and next information
    index ``j``. Feasible levels from position ``s`` are ``s`` itself (no
    order) and every level in ``delta`` above ``s``.
    """

    positions: np.ndarray
    delta: np.ndarray
    cost: np.ndarray
    moves: list
    beta: float
    clamped: int = 0

    @property
    def n_info(self) -> int:
        return self.cost.shape[0]

    @property
    def n_states(self) -> int:
        return self.cost.size

    def state_index(self, position: int, info: int) -> int:
        return info * self.positions.size + int(position - self.positions[0])

    def _shift_index(self, y: int) -> np.ndarray:
        idx = self.positions - y - self.positions[0]
        return np.clip(idx, 0, self.positions.size - 1)

    def _operator(self):
        npos = self.positions.size
        n_info = self.n_info
        shifts = [(self._shift_index(y), W) for y, W in self.moves]
        d_idx = np.searchsorted(self.positions, self.delta)
        # first delta index strictly above each position
        above = np.searchsorted(self.delta, self.positions, side="right")
        has_above = above < self.delta.size
        above_c = np.minimum(above, self.delta.size - 1)
        pos_idx = np.arange(npos)

        def apply_p(v):
            V = v.reshape(n_info, npos)
            out = np.zeros((n_info, npos))
            shared = {}
            for idx, W in shifts:
                if isinstance(W, FactoredMatrix):
                    # the shift is a column gather, so right @ V is shared across demands
                    Z = shared.get(id(W.right))
                    if Z is None:
                        Z = shared[id(W.right)] = W.right @ V
                    out[W.rows] += W.left @ Z[:, idx]
                else:
                    out += W @ V[:, idx]
            return out

        def reduce(F, tie_tol=0.0):
            FD = F[:, d_idx]
            # suffix minimum over delta, keeping the leftmost index on ties
            suf = FD.copy()
            sarg = np.tile(np.arange(self.delta.size), (n_info, 1))
            for k in range(self.delta.size - 2, -1, -1):
                take = suf[:, k + 1] < suf[:, k]
                suf[:, k] = np.where(take, suf[:, k + 1], suf[:, k])
                sarg[:, k] = np.where(take, sarg[:, k + 1], sarg[:, k])
            stay = F
            alt = np.where(has_above, suf[:, above_c], np.inf)
            best = np.minimum(stay, alt)
            if tie_tol:
                thr = best + tie_tol * np.maximum(1.0, np.abs(best))
                ok = (FD[:, None, :] <= thr[:, :, None]) & (self.delta[None, None, :] > self.positions[None, :, None])
                first = np.argmax(ok, axis=2)
                choice = np.where(stay <= thr, pos_idx[None, :], d_idx[first])
            else:
                choice = np.where(stay <= alt, pos_idx[None, :], d_idx[sarg[:, above_c]])
            flat = np.arange(n_info)[:, None] * npos + choice
            return best.reshape(-1), flat.reshape(-1)

        return self.cost, apply_p, reduce, self.n_states

    def decode_policy(self, flat_choice: np.ndarray) -> np.ndarray:
        """Order-up-to levels, shape ``(n_info, n_positions)``."""
        npos = self.positions.size
        return self.positions[np.asarray(flat_choice) % npos].reshape(self.n_info, npos)

    def to_tabular(self) -> TabularMdp:
        """Expand into a :class:`TabularMdp`; actions are indexed by ``positions``."""
        npos = self.positions.size
        n_info = self.n_info
        S = n_info * npos
        cost = np.full((S, npos), np.inf)
        rows, cols, vals = [], [], []
        for i in range(n_info):
            for k, s in enumerate(self.positions):
                state = i * npos + k
                feas = [k] + [int(j) for j in np.searchsorted(self.positions, self.delta[self.delta > s])]
                for a in feas:
                    cost[state, a] = self.cost[i, a]
                    for y, W in self.moves:
                        nxt = self._shift_index(y)[a]
                        row = W.tocsr().getrow(i)
                        for j, p in zip(row.indices, row.data):
                            rows.append(state * npos + a)
                            cols.append(j * npos + nxt)
                            vals.append(p)
        P = sp.coo_matrix((vals, (rows, cols)), shape=(S * npos, S)).tocsr()
        return TabularMdp(cost, P, self.beta, np.tile(self.positions, (S, 1)))


def _check_range(inv, position_range):
    lo, hi = default_position_range(inv) if position_range is None else position_range
    delta = inv.delta
    if lo > delta.min() or hi < delta.max():
        raise InvalidArgumentError(f"position range [{lo}, {hi}] must cover the demand-total support")
    return np.arange(int(lo), int(hi) + 1)


def _count_clamped(positions, delta, moves):
    lo = positions[0]
    return sum(int((delta - y < lo).sum()) for y, W in moves if W.nnz)


def _finish(positions, delta, cost, moves, beta):
    clamped = _count_clamped(positions, delta, moves)
    if clamped:
        log.warning("%d order-up-to/demand pairs leave the position range and are clamped", clamped)
    return InventoryDp(positions, delta, cost, moves, beta, clamped)


def grid_dp(inv: InventoryModel, grid: BeliefGrid, position_range=None) -> InventoryDp:
    """Belief-grid approximation: successor beliefs are projected onto the nearest grid point."""
    if len(grid) == 0:
        raise InvalidArgumentError("grid is empty")
    model = inv.hmm
    positions = _check_range(inv, position_range)
    support, M = tau_demand_matrix(model, inv.tau)
    cost = newsvendor_costs(positions, support, grid.points @ M, inv.h_tilde, inv.p_tilde)
    ys, _ = model.obs_values(np.arange(model.n_obs))
    G = len(grid)
    acc = {}
    for g, b in enumerate(grid.points):
        sig, lam = posterior_table(model, b)
        live = np.flatnonzero(sig > 0)
        nxt = nearest_grid_points(grid, lam[live])
        for o, j in zip(live, nxt):
            key = (int(ys[o]), g, int(j))
            acc[key] = acc.get(key, 0.0) + sig[o]
    moves = []
    for y in np.unique(ys):
        items = [(g, j, p) for (yy, g, j), p in acc.items() if yy == y]
        if items:
            g_, j_, p_ = zip(*items)
            moves.append((int(y), sp.csr_matrix((p_, (g_, j_)), shape=(G, G))))
    return _finish(positions, inv.delta, cost, moves, inv.beta)


def build_grid_mdp(inv: InventoryModel, grid: BeliefGrid, position_range=None) -> TabularMdp:
    """The belief-grid MDP as a plain tabular MDP (state index ``grid_index * n_positions + position offset``)."""
    return grid_dp(inv, grid, position_range).to_tabular()


@dataclass
class GridValueFunction:
    grid: BeliefGrid
    positions: np.ndarray
    values: np.ndarray  # (n_positions, n_grid)
    policy: np.ndarray  # order-up-to levels, (n_positions, n_grid)
    result: ValueIterationResult = field(repr=False, default=None)

    def to_csv(self, path) -> None:
        write_value_table(path, self.positions, self.values, self.policy)


def solve_grid(inv: InventoryModel, grid: BeliefGrid, position_range=None, tol=1e-8, max_iters=100_000) -> GridValueFunction:
    dp = grid_dp(inv, grid, position_range)
    res = value_iteration(dp, tol, max_iters)
    npos = dp.positions.size
    return GridValueFunction(grid, dp.positions, res.values.reshape(len(grid), npos).T, res.policy.T, res)


def write_value_table(path, positions, values, policy) -> None:
    """CSV with columns ``position, grid_index, value, action``; tables are ``(n_positions, n_info)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "grid_index", "value", "action"])
        for k, s in enumerate(positions):
            for i in range(values.shape[1]):
                w.writerow([int(s), i, repr(float(values[k, i])), int(policy[k, i])])


# -- full-information relaxation --------------------------------------


def relaxation_dp(inv: InventoryModel, position_range=None) -> InventoryDp:
    """MDP in which the latent state is observed: states ``positions x latent``."""
    model = inv.hmm
    positions = _check_range(inv, position_range)
    support, M = tau_demand_matrix(model, inv.tau)
    cost = newsvendor_costs(positions, support, M, inv.h_tilde, inv.p_tilde)
    U = model.transition
    Ey = model.demand_pmf
    moves = []
    for k, y in enumerate(model.y_support):
        W = U * Ey[None, :, k] if model.next_emits else Ey[:, k, None] * U
        if np.any(W > 0):
            moves.append((int(y), sp.csr_matrix(W)))
    return _finish(positions, inv.delta, cost, moves, inv.beta)


@dataclass
class RelaxationValues:
    positions: np.ndarray
    values: np.ndarray  # (n_positions, n_states)
    policy: np.ndarray  # (n_positions, n_states)
    result: ValueIterationResult = field(repr=False, default=None)

    def value(self, position: int, state: int) -> float:
        return float(self.values[self._pos(position), state])

    def _pos(self, position) -> int:
        k = int(position) - int(self.positions[0])
        if not 0 <= k < self.positions.size:
            raise InvalidArgumentError(f"position {position} outside [{self.positions[0]}, {self.positions[-1]}]")
        return k

    def to_csv(self, path) -> None:
        write_value_table(path, self.positions, self.values, self.policy)


def information_relaxation_values(inv: InventoryModel, position_range=None, tol=1e-8, max_iters=100_000) -> RelaxationValues:
    """Fixed point of the Bellman operator for the latent-state-revealed MDP."""
    dp = relaxation_dp(inv, position_range)
    res = value_iteration(dp, tol, max_iters)
    n = inv.hmm.n_states
    return RelaxationValues(dp.positions, res.values.reshape(n, -1).T, res.policy.T, res)


def relaxation_lower_bound(vm: RelaxationValues, belief, position: int) -> float:
    """``sum_mu b(mu) v_M(s, mu)``: a lower bound on the optimal cost from ``(s, b)``."""
    b = as_belief(belief, vm.values.shape[1])
    return float(vm.values[vm._pos(position)] @ b)


# -- probability-matching heuristic ------------------------------------


class HeuristicPolicy:
    """Fixed-belief MDP over ``positions x observations`` and its randomized action rule.

    For the current belief ``b`` the MDP has one layer per observation
    ``o = (y', x')`` with ``sigma(o | b) > 0``. Its cost is the newsvendor cost
    given that the first demand is ``y'`` and the rest follow from
    ``lambda(o, b)``; the next layer is drawn from ``sigma(. | lambda(o, b))``
    while the belief argument stays at ``b``. The action is ``delta*_o(s)``
    with ``o`` sampled from ``sigma(. | b)``.
    """

    def __init__(self, inv: InventoryModel, belief, position_range=None, tol=1e-8, max_iters=100_000):
        model = inv.hmm
        self.belief = as_belief(belief, model.n_states)
        sig, lam = posterior_table(model, self.belief)
        live = np.flatnonzero(sig > 0)
        self.obs = live
        self.probs = sig[live] / sig[live].sum()
        ys, _ = model.obs_values(live)
        positions = _check_range(inv, position_range)
        if inv.tau == 0:
            cost = np.tile(newsvendor_costs(positions, [0], [1.0], inv.h_tilde, inv.p_tilde), (live.size, 1))
        else:
            support, M = tau_demand_matrix(model, inv.tau - 1)
            pmf = lam[live] @ M
            cost = np.stack(
                [newsvendor_costs(positions - y, support, p, inv.h_tilde, inv.p_tilde) for y, p in zip(ys, pmf)]
            )
        # successor layer distribution sigma(. | lambda(o, b)) = lambda(o, b) @ A, restricted to live layers
        A = model.flat_emission if not model.next_emits else model.transition @ model.flat_emission
        A = A[:, live]
        Lam = lam[live]
        moves = []
        for y in np.unique(ys):
            rows = np.flatnonzero(ys == y)
            moves.append((int(y), FactoredMatrix(live.size, rows, Lam[rows], A)))
        self.dp = _finish(positions, inv.delta, cost, moves, inv.beta)
        self.result = value_iteration(self.dp, tol, max_iters)
        self.positions = positions
        self.levels = self.result.policy  # (n_live_obs, n_positions)
        self.values = self.result.values.reshape(live.size, -1)

    def _pos(self, position) -> int:
        k = int(position) - int(self.positions[0])
        if not 0 <= k < self.positions.size:
            raise InvalidArgumentError(f"position {position} outside the solved range")
        return k

    def action(self, position: int, seed: int) -> int:
        """Order-up-to level chosen by probability matching."""
        r = np.random.default_rng(seed).random()
        o = min(int(np.searchsorted(np.cumsum(self.probs), r, side="right")), self.probs.size - 1)
        return int(self.levels[o, self._pos(position)])

    def action_distribution(self, position: int) -> dict:
        k = self._pos(position)
        out: dict = {}
        for p, a in zip(self.probs, self.levels[:, k]):
            out[int(a)] = out.get(int(a), 0.0) + float(p)
        return dict(sorted(out.items()))

    def lower_bound_estimate(self, position: int) -> float:
        """``sum_o sigma(o | b) v'_o(s, b)``; a diagnostic, not a guaranteed bound."""
        return float(self.probs @ self.values[:, self._pos(position)])


def heuristic_action(inv: InventoryModel, position: int, belief, seed: int, position_range=None) -> int:
    """Solve the fixed-belief MDP afresh and return a probability-matched order-up-to level."""
    return HeuristicPolicy(inv, belief, position_range).action(position, seed)


def concavity_slack(gvf: GridValueFunction, n_checks: int = 200, seed: int = 0, tol: float = 1e-3) -> dict:
    """Spot check of concavity in the belief on the grid solution.

    Looks for grid triples with ``b ~= alpha b1 + (1 - alpha) b2`` (within
    ``tol`` in sup-norm) and reports the worst violation of
    ``v(s, b) >= alpha v(s, b1) + (1 - alpha) v(s, b2)``.
    """
    rng = np.random.default_rng(seed)
    P = gvf.grid.points
    G = len(P)
    worst = 0.0
    found = 0
    if G < 3:
        return {"checked": 0, "max_violation": 0.0}
    for _ in range(n_checks):
        i, j = rng.choice(G, 2, replace=False)
        diff = P[i] - P[j]
        denom = diff @ diff
        if denom == 0:
            continue
        alpha = np.clip(((P - P[j]) @ diff) / denom, 0.0, 1.0)
        proj = alpha[:, None] * P[i] + (1 - alpha[:, None]) * P[j]
        near = np.abs(P - proj).max(axis=1) <= tol
        near[[i, j]] = False
        for k in np.flatnonzero(near):
            s = rng.integers(gvf.positions.size)
            v = gvf.values[s]
            gap = alpha[k] * v[i] + (1 - alpha[k]) * v[j] - v[k]
            worst = max(worst, float(gap))
            found += 1
    return {"checked": found, "max_violation": worst}
