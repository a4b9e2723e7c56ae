"""Monte Carlo evaluation of belief-to-base-stock policies and the
dataset-size experiment comparing policies built from trained HMMs.

Timing convention of :func:`evaluate_policy` (epochs ``t = 0 .. T``):

* ``y_t`` is the demand observed at the start of epoch ``t`` (``y_0 = 0``);
  the belief ``b_t`` already includes it.
* The inventory position netted of that demand is
  ``s_t + sum(pipeline) - y_t``; the order is ``(target(b_t) - position)^+``.
* The order placed ``tau`` epochs ago arrives, ``y_t`` is removed from stock
  and the period cost ``h~ (.)^+ + p~ (.)^-`` of the resulting level is
  charged with weight ``beta^t``.
* ``(y_{t+1}, x_{t+1}, u_{t+1})`` is drawn from the true model and the
  belief is updated with the evaluation model's filter.

With this ordering each order-up-to decision is charged for exactly the
``tau`` demands it has to cover.
"""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .belief_grid import build_grid, simulate_belief_trajectory
from .hmm import (
    HiddenMarkovModel,
    InvalidArgumentError,
    Trajectory,
    _Sampler,
    as_belief,
    baum_welch,
    sample_trajectory,
    uniform_belief,
)
from .inventory import BasestockTable, InventoryModel, monte_carlo_basestock
from .svm import TRAINERS, BasestockClassifier

log = logging.getLogger(__name__)

# Offsets added to the master seed so each stage can be rerun on its own.
SEED_OFFSETS = {
    "grid": 10_000_000,
    "labels": 20_000_000,
    "svm": 30_000_000,
    "eval": 40_000_000,
    "data": 50_000_000,
    "em": 60_000_000,
    "bound": 70_000_000,
}


def component_seed(master: int, stage: str, index: int = 0) -> int:
    return int(master) + SEED_OFFSETS[stage] + int(index)


@dataclass
class EvaluationReport:
    mean_cost: float
    std_error: float
    n_sims: int
    horizon: int
    per_sim_costs: np.ndarray | None = field(default=None, repr=False)
    impossible_observations: int = 0

    def row(self) -> dict:
        return {
            "mean_cost": self.mean_cost,
            "std_error": self.std_error,
            "n_sims": self.n_sims,
            "horizon": self.horizon,
            "impossible_observations": self.impossible_observations,
        }


class ExactBasestockPolicy:
    """Myopic base-stock levels computed exactly from a model's belief."""

    def __init__(self, model: HiddenMarkovModel, tau: int, h_tilde: float, p_tilde: float):
        self.table = BasestockTable(model, tau, h_tilde, p_tilde)

    def predict(self, beliefs) -> np.ndarray:
        return self.table.levels(beliefs)


def _params(inv) -> tuple[int, float, float, float]:
    if isinstance(inv, InventoryModel):
        return inv.tau, inv.h_tilde, inv.p_tilde, inv.beta
    return int(inv["tau"]), float(inv["h_tilde"]), float(inv["p_tilde"]), float(inv["beta"])


def _obs_map(true_model: HiddenMarkovModel, eval_model: HiddenMarkovModel) -> np.ndarray:
    """Flat observation index of the true model -> eval model index, ``-1`` if unsupported."""
    ys, xs = true_model.obs_values(np.arange(true_model.n_obs))
    yi = np.searchsorted(eval_model.y_support, ys)
    xi = np.searchsorted(eval_model.x_support, xs)
    yc = np.minimum(yi, eval_model.y_support.size - 1)
    xc = np.minimum(xi, eval_model.x_support.size - 1)
    ok = (eval_model.y_support[yc] == ys) & (eval_model.x_support[xc] == xs)
    return np.where(ok, yc * eval_model.x_support.size + xc, -1)


def _simulate_paths(true_model, eval_model, n_sims, steps, seed, b0):
    """Shared path simulator: demands ``y_1..y_steps`` and eval beliefs ``b_0..b_steps``.

    Every simulation draws its uniforms from ``default_rng(seed + n)``. The
    true ``u_0`` is drawn from ``b0`` when both models have the same number
    of latent states and from the uniform belief otherwise.
    """
    n = eval_model.n_states
    if true_model.n_states != n:
        log.debug("true model has %d latent states, eval model %d", true_model.n_states, n)
    b0 = uniform_belief(n) if b0 is None else as_belief(b0, n)
    # the initial belief is also the law of the true u_0 when dimensions agree
    b0_true = b0 if true_model.n_states == n else uniform_belief(true_model.n_states)
    r = np.stack([np.random.default_rng(seed + k).random(1 + 2 * steps) for k in range(n_sims)], axis=1)
    sampler = _Sampler(true_model)
    omap = _obs_map(true_model, eval_model)
    ys_true, _ = true_model.obs_values(np.arange(true_model.n_obs))
    E = eval_model.flat_emission  # (n, n_obs)
    U = eval_model.transition
    u = sampler.initial(b0_true, r[0])
    demands = np.zeros((steps, n_sims), dtype=np.int64)
    beliefs = np.empty((steps + 1, n_sims, n))
    beliefs[0] = b0
    b = np.broadcast_to(b0, (n_sims, n)).copy()
    uniform = uniform_belief(n)
    impossible = 0
    for t in range(steps):
        u, o = sampler.step(u, r[1 + 2 * t], r[2 + 2 * t])
        demands[t] = ys_true[o]
        idx = omap[o]
        lik = np.where(idx[:, None] >= 0, E[:, np.maximum(idx, 0)].T, 0.0)
        if eval_model.next_emits:
            post = (b @ U) * lik
        else:
            post = (b * lik) @ U
        z = post.sum(axis=1)
        bad = z <= 0
        if bad.any():
            impossible += int(bad.sum())
            post[bad] = uniform
            z[bad] = 1.0
        b = post / z[:, None]
        beliefs[t + 1] = b
    return demands, beliefs, impossible


def _report(costs, horizon, impossible, keep) -> EvaluationReport:
    n = costs.size
    se = float(costs.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return EvaluationReport(float(costs.mean()), se, n, horizon, costs if keep else None, impossible)


def evaluate_policy(
    true_model: HiddenMarkovModel,
    eval_model: HiddenMarkovModel,
    classifier,
    inv_params,
    horizon: int,
    n_sims: int,
    seed: int,
    initial_belief=None,
    keep_costs: bool = False,
) -> EvaluationReport:
    """Discounted cost of following ``classifier`` (anything with ``predict(beliefs)``).

    Starts from zero stock, an empty pipeline and (by default) the uniform
    belief; epochs ``t = 0 .. horizon``. Observations the evaluation model
    deems impossible reset its belief to uniform and are counted.
    """
    if horizon < 1 or n_sims < 1:
        raise InvalidArgumentError("horizon and n_sims must be >= 1")
    if isinstance(classifier, BasestockClassifier) and classifier.n_features != eval_model.n_states:
        raise InvalidArgumentError(
            f"classifier expects {classifier.n_features} states, eval model has {eval_model.n_states}"
        )
    tau, h, p, beta = _params(inv_params)
    demands, beliefs, impossible = _simulate_paths(true_model, eval_model, n_sims, horizon, seed, initial_belief)
    stock = np.zeros(n_sims)
    pipeline = np.zeros((n_sims, tau))
    cost = np.zeros(n_sims)
    y_now = np.zeros(n_sims)
    for t in range(horizon + 1):
        target = np.asarray(classifier.predict(beliefs[t]), dtype=float)
        position = stock + pipeline.sum(axis=1) - y_now
        order = np.maximum(target - position, 0.0)
        if tau:
            arriving = pipeline[:, 0].copy()
            pipeline[:, :-1] = pipeline[:, 1:]
            pipeline[:, -1] = order
        else:
            arriving = order
        level = stock + arriving - y_now
        cost += beta**t * (h * np.maximum(level, 0.0) + p * np.maximum(-level, 0.0))
        stock = level
        if t < horizon:
            y_now = demands[t].astype(float)
    return _report(cost, horizon, impossible, keep_costs)


def evaluate_position_policy(
    true_model: HiddenMarkovModel,
    eval_model: HiddenMarkovModel,
    classifier,
    inv_params,
    horizon: int,
    n_sims: int,
    seed: int,
    initial_position: int = 0,
    initial_belief=None,
    keep_costs: bool = False,
) -> EvaluationReport:
    """Discounted cost in the inventory-position formulation, from ``(s, b)``.

    At epoch ``t`` the position is raised to ``max(target(b_t), s_t)``, the
    cost is the newsvendor cost of that level against ``y_{t+1} + .. +
    y_{t+tau}`` and ``s_{t+1} = level - y_{t+1}``. This is the cost whose
    optimum the full-information relaxation bounds from below.
    """
    if horizon < 1 or n_sims < 1:
        raise InvalidArgumentError("horizon and n_sims must be >= 1")
    tau, h, p, beta = _params(inv_params)
    demands, beliefs, impossible = _simulate_paths(
        true_model, eval_model, n_sims, horizon + 1 + tau, seed, initial_belief
    )
    csum = np.vstack([np.zeros((1, n_sims)), np.cumsum(demands, axis=0)])
    pos = np.full(n_sims, float(initial_position))
    cost = np.zeros(n_sims)
    for t in range(horizon + 1):
        level = np.maximum(np.asarray(classifier.predict(beliefs[t]), dtype=float), pos)
        gap = level - (csum[t + tau] - csum[t])
        cost += beta**t * (h * np.maximum(gap, 0.0) + p * np.maximum(-gap, 0.0))
        pos = level - demands[t]
    return _report(cost, horizon, impossible, keep_costs)


# -- policy construction ------------------------------------------------


@dataclass
class PolicyBuild:
    classifier: BasestockClassifier
    grid: object
    labels: np.ndarray
    training_accuracy: dict


def label_grid(model, points, tau, h_tilde, p_tilde, n_samples, seed) -> np.ndarray:
    """Monte Carlo base-stock label for each grid point; point ``i`` uses seed ``seed + i``."""
    return np.array(
        [monte_carlo_basestock(model, b, tau, h_tilde, p_tilde, n_samples, seed + i) for i, b in enumerate(points)],
        dtype=int,
    )


def build_policy(
    model: HiddenMarkovModel,
    inv_params,
    N: int = 10_000,
    d: int = 2,
    K: int = 200,
    n_samples: int = 10_000,
    C_list=(10.0, 50.0),
    max_epochs: int = 20_000,
    tol: float = 1e-4,
    method: str = "crammer_singer",
    seed: int = 0,
    restarts: int = 1,
) -> PolicyBuild:
    """Belief simulation, grid, Monte Carlo labels and SVM training.

    When several ``C`` values are listed the one with the highest training
    accuracy wins, earlier entries first on ties.
    """
    tau, h, p, _ = _params(inv_params)
    if method not in TRAINERS:
        raise InvalidArgumentError(f"unknown SVM method {method!r}; choose from {sorted(TRAINERS)}")
    if not C_list:
        raise InvalidArgumentError("C_list must be nonempty")
    beliefs = simulate_belief_trajectory(
        model, uniform_belief(model.n_states), N, component_seed(seed, "grid"), restarts
    )
    grid = build_grid(beliefs, d, K)
    if len(grid) == 0:
        raise InvalidArgumentError("belief grid is empty")
    labels = label_grid(model, grid.points, tau, h, p, n_samples, component_seed(seed, "labels"))
    best, best_acc, accs = None, -1.0, {}
    for C in C_list:
        clf = TRAINERS[method](grid.points, labels, C=float(C), max_epochs=max_epochs, tol=tol, seed=component_seed(seed, "svm"))
        acc = float((clf.predict(grid.points) == labels).mean())
        accs[float(C)] = acc
        if acc > best_acc:
            best, best_acc = clf, acc
    return PolicyBuild(best, grid, labels, accs)


# -- dataset-size experiment -------------------------------------------


@dataclass
class GapRow:
    dataset_size: int
    restart: int
    mean_cost: float
    std_error: float
    gap_vs_true: float
    best_flag: bool
    log_likelihood: float = float("nan")


@dataclass
class GapTable:
    true_cost: EvaluationReport
    rows: list

    def sizes(self) -> list:
        return sorted({r.dataset_size for r in self.rows})

    def best(self, size: int) -> GapRow:
        return next(r for r in self.rows if r.dataset_size == size and r.best_flag)

    def mean_gap(self, size: int) -> float:
        return float(np.mean([r.gap_vs_true for r in self.rows if r.dataset_size == size]))

    def summary(self) -> list:
        """Per size: best-restart cost, mean-restart cost and their gaps to the true-model policy."""
        out = []
        for s in self.sizes():
            rs = [r for r in self.rows if r.dataset_size == s]
            b = self.best(s)
            out.append(
                {
                    "dataset_size": s,
                    "best_cost": b.mean_cost,
                    "best_std_error": b.std_error,
                    "mean_cost": float(np.mean([r.mean_cost for r in rs])),
                    "best_gap": b.gap_vs_true,
                    "mean_gap": self.mean_gap(s),
                    "true_cost": self.true_cost.mean_cost,
                    "true_std_error": self.true_cost.std_error,
                }
            )
        return out

    def write_rows(self, path) -> None:
        write_gap_csv(path, self.rows)


GAP_COLUMNS = ["dataset_size", "restart", "mean_cost", "std_error", "gap_vs_true", "best_flag"]


def write_gap_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GAP_COLUMNS)
        for r in rows:
            w.writerow([r.dataset_size, r.restart, repr(r.mean_cost), repr(r.std_error), repr(r.gap_vs_true), int(r.best_flag)])


def worker_count() -> int:
    """Thread cap from ``SEP_POMDP_THREADS`` (``0`` or unset means one per CPU)."""
    raw = os.environ.get("SEP_POMDP_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidArgumentError(f"SEP_POMDP_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InvalidArgumentError("SEP_POMDP_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def generate_dataset(model: HiddenMarkovModel, n_traj: int, length: int, seed: int) -> list:
    """``n_traj`` trajectories from the uniform initial belief; trajectory ``j`` uses ``seed + j``."""
    b0 = uniform_belief(model.n_states)
    return [sample_trajectory(model, b0, length, seed + j) for j in range(n_traj)]


def train_restarts(data, n_states, n_restarts, seed, tol=1e-6, max_iters=500, y_support=None, x_support=None):
    """Baum-Welch from ``n_restarts`` random starts (seeds ``seed + r``), run on a thread pool."""
    data = [Trajectory(t.demands, t.aods) for t in data]

    def fit(r):
        return baum_welch(data, n_states, seed + r, tol, max_iters, y_support=y_support, x_support=x_support)

    with ThreadPoolExecutor(max_workers=min(worker_count(), n_restarts)) as pool:
        return list(pool.map(fit, range(n_restarts)))


def optimality_gap_experiment(config, on_size=None) -> GapTable:
    """Dataset-size sweep: train HMMs, build their policies and evaluate them on the true model.

    ``config`` is an :class:`~seppomdp.config.ExperimentConfig`. All
    policies are evaluated with the same seed (common random numbers). The
    best restart is the one with the lowest evaluated cost. ``on_size`` is
    called with the rows of each finished size.
    """
    true_model = config.true_hmm()
    inv = config.inventory_params()
    g, s, tr, ev = config.grid, config.svm, config.training, config.evaluation
    seed = config.seed

    def policy_for(model):
        return build_policy(
            model, inv, N=g["N"], d=g["d"], K=g["K"], n_samples=g["mc_samples"], C_list=s["C_list"],
            max_epochs=s["max_epochs"], tol=s["tol"], method=s["method"], seed=seed, restarts=g["restarts"],
        ).classifier

    eval_seed = component_seed(seed, "eval")
    true_clf = policy_for(true_model)
    true_rep = evaluate_policy(true_model, true_model, true_clf, inv, ev["horizon"], ev["n_sims"], eval_seed)
    rows = []
    for k, size in enumerate(tr["dataset_sizes"]):
        data = generate_dataset(true_model, size, tr["trajectory_length"], component_seed(seed, "data", 100_000 * k))
        fits = train_restarts(
            data, tr["n_states"], tr["n_restarts"], component_seed(seed, "em", 1000 * k), tr["em_tol"], tr["em_max_iters"],
            true_model.y_support, true_model.x_support,
        )
        size_rows = []
        for r, (model, trace) in enumerate(fits):
            rep = evaluate_policy(true_model, model, policy_for(model), inv, ev["horizon"], ev["n_sims"], eval_seed)
            size_rows.append(GapRow(size, r, rep.mean_cost, rep.std_error, rep.mean_cost - true_rep.mean_cost, False, trace[-1]))
        best = min(range(len(size_rows)), key=lambda i: size_rows[i].mean_cost)
        size_rows[best].best_flag = True
        rows.extend(size_rows)
        log.info("size %d: best gap %.4f", size, size_rows[best].gap_vs_true)
        if on_size is not None:
            on_size(size_rows)
    return GapTable(true_rep, rows)
