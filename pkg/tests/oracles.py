"""Brute-force reference implementations used as test oracles.

Everything here enumerates explicitly (latent paths, demand sequences,
candidate levels) and is only meant for tiny instances.
"""
from itertools import product

import numpy as np

from seppomdp.hmm import EmissionConvention, HiddenMarkovModel


def random_hmm(rng, n, ny, nx, convention=EmissionConvention.CONDITION_ON_NEXT, zeros=False, y0=0):
    U = rng.dirichlet(np.ones(n), size=n)
    E = rng.dirichlet(np.ones(ny * nx), size=n)
    if zeros:
        # knock out some cells, keeping at least one per state
        mask = rng.random(E.shape) < 0.3
        mask[np.arange(n), rng.integers(ny * nx, size=n)] = False
        E = np.where(mask, 0.0, E)
        E /= E.sum(axis=1, keepdims=True)
    return HiddenMarkovModel(U, E.reshape(n, ny, nx), np.arange(y0, y0 + ny), np.arange(nx), convention)


def path_posterior(model, b0, obs):
    """Enumerate every latent path ``u_0 .. u_T``; returns (posterior of u_T, likelihood)."""
    n = model.n_states
    U, E = model.transition, model.flat_emission
    T = len(obs)
    post = np.zeros(n)
    for path in product(range(n), repeat=T + 1):
        p = b0[path[0]]
        for t in range(T):
            emitter = path[t + 1] if model.next_emits else path[t]
            p *= U[path[t], path[t + 1]] * E[emitter, obs[t]]
        post[path[-1]] += p
    total = post.sum()
    return post / total if total > 0 else post, total


def tau_sum_pmf(model, b, tau):
    """Distribution of ``y_1 + .. + y_tau`` by enumerating latent paths and demands."""
    n = model.n_states
    Ey = model.demand_pmf
    ys = model.y_support
    out = {}
    for path in product(range(n), repeat=tau + 1):
        pp = b[path[0]] * np.prod([model.transition[path[t], path[t + 1]] for t in range(tau)])
        if pp == 0:
            continue
        for ks in product(range(ys.size), repeat=tau):
            p = pp
            for t, k in enumerate(ks):
                emitter = path[t + 1] if model.next_emits else path[t]
                p *= Ey[emitter, k]
            total = int(sum(ys[k] for k in ks))
            out[total] = out.get(total, 0.0) + p
    return out


def brute_basestock(pmf: dict, candidates, h, p):
    """Smallest candidate minimizing ``E[h (a - D)^+ + p (D - a)^+]`` by direct scan."""
    best, best_cost = None, np.inf
    for a in sorted(candidates):
        c = sum(q * (h * max(a - d, 0) + p * max(d - a, 0)) for d, q in pmf.items())
        if best is None or c < best_cost - 1e-9 * max(1.0, abs(best_cost)):
            best, best_cost = a, c
    return best


def policy_value(mdp, policy):
    """Value of a deterministic policy by solving the linear system directly."""
    S, A = mdp.cost.shape
    P = mdp.transition.toarray().reshape(S, A, S)[np.arange(S), policy]
    c = mdp.cost[np.arange(S), policy]
    return np.linalg.solve(np.eye(S) - mdp.beta * P, c)


def bellman(mdp, v):
    S, A = mdp.cost.shape
    P = mdp.transition.toarray().reshape(S, A, S)
    return (mdp.cost + mdp.beta * P @ v).min(axis=1)


def random_mdp(rng, S, A, beta, infeasible=0.0):
    import scipy.sparse as sp

    from seppomdp.solvers import TabularMdp

    cost = rng.uniform(0, 10, size=(S, A))
    P = rng.dirichlet(np.ones(S) * 0.5, size=S * A)
    if infeasible:
        mask = rng.random((S, A)) < infeasible
        mask[:, 0] = False
        cost[mask] = np.inf
    return TabularMdp(cost, sp.csr_matrix(P), beta)


def nearest_scan(points, b):
    best, best_d = 0, np.inf
    for i, q in enumerate(points):
        d = max(abs(x - y) for x, y in zip(q, b))
        if d < best_d:
            best, best_d = i, d
    return best


def svm_primal_optimum(X, yi, C, n_classes=None, binary=False):
    """Optimal objective of the regularized hinge problem, solved as a slack QP by SLSQP.

    ``X`` already carries the constant column. ``binary`` means ``yi`` holds
    +-1 targets and a single weight vector; otherwise Crammer-Singer with
    class indices ``yi``.
    """
    from scipy.optimize import minimize

    n, p = X.shape
    K = 1 if binary else n_classes
    nw = K * p

    def obj(z):
        w = z[:nw]
        return 0.5 * w @ w + C * z[nw:].sum()

    def grad(z):
        return np.concatenate([z[:nw], np.full(n, C)])

    rows = []
    rhs = []
    for i in range(n):
        if binary:
            # y_i w.x_i + xi_i >= 1
            r = np.zeros(nw + n)
            r[:p] = yi[i] * X[i]
            r[nw + i] = 1.0
            rows.append(r)
            rhs.append(1.0)
        else:
            # f_{y_i} - f_k + xi_i >= 1 for k != y_i
            for k in range(K):
                if k == yi[i]:
                    continue
                r = np.zeros(nw + n)
                r[yi[i] * p : (yi[i] + 1) * p] = X[i]
                r[k * p : (k + 1) * p] = -X[i]
                r[nw + i] = 1.0
                rows.append(r)
                rhs.append(1.0)
    A, b = np.array(rows), np.array(rhs)
    cons = [{"type": "ineq", "fun": lambda z: A @ z - b, "jac": lambda z: A}]
    bounds = [(None, None)] * nw + [(0, None)] * n
    z0 = np.concatenate([np.zeros(nw), np.full(n, 1.0)])
    res = minimize(obj, z0, jac=grad, bounds=bounds, constraints=cons, method="SLSQP", options={"maxiter": 1000, "ftol": 1e-12})
    return float(res.fun)


def prefix_posteriors(model, b0, obs):
    """For every prefix ``obs[:t]``, enumerate all latent paths ``u_0 .. u_t``.

    Vectorized over paths but still a literal sum over every path. Returns a
    list of ``(posterior of u_t, likelihood of the prefix)`` for ``t = 1..T``.
    """
    n = model.n_states
    U, E = model.transition, model.flat_emission
    out = []
    for t in range(1, len(obs) + 1):
        paths = np.array(list(product(range(n), repeat=t + 1)))
        p = b0[paths[:, 0]].astype(float)
        for k in range(t):
            emitter = paths[:, k + 1] if model.next_emits else paths[:, k]
            p = p * U[paths[:, k], paths[:, k + 1]] * E[emitter, obs[k]]
        lik = p.sum()
        out.append((np.bincount(paths[:, -1], weights=p, minlength=n) / lik, lik))
    return out
