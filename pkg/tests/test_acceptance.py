"""Acceptance criteria 1-9 with pinned tolerances.

Each test records one PASS/FAIL line (printed at the end of the pytest run)
and then asserts. Run as a script for the lines alone:
``python tests/test_acceptance.py [criterion ...]``.
"""
import csv
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from acceptance_report import lines, record  # noqa: E402
from oracles import brute_basestock, prefix_posteriors, random_hmm, random_mdp, tau_sum_pmf  # noqa: E402
from seppomdp.belief_grid import simulate_belief_trajectory  # noqa: E402
from seppomdp.cli import main as cli_main  # noqa: E402
from seppomdp.config import ExperimentConfig  # noqa: E402
from seppomdp.evaluation import build_policy, component_seed, evaluate_position_policy  # noqa: E402
from seppomdp.hmm import (  # noqa: E402
    EmissionConvention,
    Trajectory,
    baum_welch,
    forward_log_likelihood,
    lambda_update,
    sample_trajectory,
    sigma,
    uniform_belief,
)
from seppomdp.inventory import (  # noqa: E402
    BasestockTable,
    InventoryModel,
    delta_set,
    exact_basestock,
    monte_carlo_basestock,
)
from seppomdp.models import (  # noqa: E402
    PARTITION_INVENTORY,
    REGIME_HORIZON,
    REGIME_INVENTORY,
    partition_demo_model,
    regime_demand_model,
)
from seppomdp.solvers import HeuristicPolicy, TabularMdp, information_relaxation_values, relaxation_lower_bound, value_iteration  # noqa: E402
from seppomdp.svm import band_structure, simplex_mesh, train_multiclass  # noqa: E402

import scipy.sparse as sp  # noqa: E402

CONVENTIONS = list(EmissionConvention)


def _finish(criterion, passed, detail, start, limit=None):
    elapsed = time.perf_counter() - start
    if limit is not None and elapsed >= limit:
        passed = False
        detail += f"; runtime {elapsed:.1f} s exceeds {limit} s"
    else:
        detail += f" ({elapsed:.1f} s)"
    record(criterion, passed, detail)
    assert passed, detail


def test_criterion_1_filter_matches_path_enumeration():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_b = worst_ll = 0.0
    for case in range(200):
        n, ny, nx, T = int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 9))
        m = random_hmm(rng, n, ny, nx, CONVENTIONS[case % 2], y0=int(rng.integers(0, 3)))
        b0 = rng.dirichlet(np.ones(n))
        obs = rng.integers(0, m.n_obs, size=T)
        ys, xs = m.obs_values(obs)
        ref = prefix_posteriors(m, b0, obs)
        b = b0
        for t in range(T):
            b = lambda_update(m, b, int(ys[t]), int(xs[t]))
            worst_b = max(worst_b, float(np.abs(b - ref[t][0]).max()))
            ll = forward_log_likelihood(m, Trajectory(ys[: t + 1], xs[: t + 1]), b0)
            worst_ll = max(worst_ll, abs(ll - np.log(ref[t][1])))
    ok = worst_b <= 1e-9 and worst_ll <= 1e-9
    _finish(1, ok, f"200 HMMs: max belief error {worst_b:.1e}, max log-likelihood error {worst_ll:.1e} (tol 1e-9)", start, 30)


def test_criterion_2_em_monotone():
    start = time.perf_counter()
    worst = 0.0
    for problem in range(50):
        rng = np.random.default_rng(2000 + problem)
        true = random_hmm(rng, 2, 3, 2)
        data = [sample_trajectory(true, uniform_belief(2), 40, 100 * problem + k) for k in range(5)]
        for seed in range(5):
            _, trace = baum_welch(data, 2, seed=seed, tol=1e-10, max_iters=60)
            if len(trace) > 1:
                worst = min(worst, float(np.diff(trace).min()))
    _finish(2, worst >= -1e-8, f"250 EM runs: most negative trace step {worst:.1e} (tol -1e-8)", start, 60)


def test_criterion_3_basestock_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    mismatches = 0
    for case in range(500):
        n, ny, nx, tau = int(rng.integers(1, 4)), int(rng.integers(1, 5)), int(rng.integers(1, 3)), int(rng.integers(0, 4))
        m = random_hmm(rng, n, ny, nx, CONVENTIONS[case % 2], zeros=bool(case % 3 == 0), y0=int(rng.integers(0, 4)))
        b = rng.dirichlet(np.ones(n))
        h, p = float(rng.uniform(0.5, 20)), float(rng.uniform(0.5, 80))
        ref = brute_basestock(tau_sum_pmf(m, b, tau), delta_set(m.y_support, tau), h, p)
        mismatches += exact_basestock(m, b, tau, h, p) != ref
    m = regime_demand_model()
    inv = REGIME_INVENTORY
    beliefs = simulate_belief_trajectory(m, uniform_belief(3), 1000, seed=3)[::10]
    agree = sum(
        monte_carlo_basestock(m, b, inv["tau"], inv["h_tilde"], inv["p_tilde"], 100_000, seed=k)
        == exact_basestock(m, b, inv["tau"], inv["h_tilde"], inv["p_tilde"])
        for k, b in enumerate(beliefs)
    )
    ok = mismatches == 0 and agree >= 95
    _finish(3, ok, f"exact vs brute force: {mismatches}/500 mismatches; Monte Carlo (N=100000) agrees on {agree}/100 beliefs (need 95)", start)


def test_criterion_4_partition_bands_and_svm_agreement():
    start = time.perf_counter()
    m, inv = partition_demo_model(), PARTITION_INVENTORY
    table = BasestockTable(m, inv["tau"], inv["h_tilde"], inv["p_tilde"])
    train = simplex_mesh(3, 50)
    labels = table.levels(train)
    bands = band_structure(train, labels, 50)
    # held out: resolution-100 mesh points that are not on the training mesh
    fine = simplex_mesh(3, 100)
    held = fine[np.any(np.rint(fine * 100).astype(int) % 2 == 1, axis=1)]
    truth = table.levels(held)
    agree = {C: float(np.mean(train_multiclass(train, labels, C=C).predict(held) == truth)) for C in (10.0, 50.0)}
    ok = bands["ordered_bands"] and agree[50.0] >= 0.90 and agree[10.0] <= agree[50.0]
    detail = (
        f"levels {bands['levels']} ordered_bands={bands['ordered_bands']}; held-out agreement "
        f"C=50 {agree[50.0]:.3f} (need >= 0.90), C=10 {agree[10.0]:.3f} (need <= C=50)"
    )
    _finish(4, ok, detail, start, 300)


def test_criterion_5_value_iteration_contraction():
    start = time.perf_counter()
    rng = np.random.default_rng(505)
    worst = -np.inf
    for _ in range(100):
        beta = float(rng.uniform(0.1, 0.97))
        mdp = random_mdp(rng, int(rng.integers(1, 9)), int(rng.integers(1, 5)), beta, infeasible=0.3)
        r = np.asarray(value_iteration(mdp, tol=1e-10).residuals)
        nz = r[:-1] > 0
        if nz.any():
            worst = max(worst, float((r[1:][nz] / r[:-1][nz] - beta).max()))
    geo = value_iteration(TabularMdp(np.ones((1, 1)), sp.csr_matrix(np.ones((1, 1))), 0.9), tol=1e-10).values[0]
    ok = worst <= 1e-12 and abs(geo - 10.0) <= 1e-8
    _finish(5, ok, f"100 MDPs: max (ratio - beta) {worst:.1e} (tol 1e-12); geometric series {geo:.12f} vs 10", start)


def test_criterion_6_relaxation_bound():
    start = time.perf_counter()
    cfg = ExperimentConfig.from_dict({})
    model = cfg.true_hmm()
    inv = cfg.inventory_model(model)
    g, s = cfg.grid, cfg.svm
    pb = build_policy(
        model, cfg.inventory_params(), N=g["N"], d=g["d"], K=g["K"], n_samples=g["mc_samples"], C_list=s["C_list"],
        max_epochs=s["max_epochs"], tol=s["tol"], method=s["method"], seed=cfg.seed,
    )
    vm = information_relaxation_values(inv)
    rng = np.random.default_rng(1)
    picks = rng.integers(len(pb.grid), size=50)
    positions = rng.integers(-20, 80, size=50)
    seed = component_seed(cfg.seed, "bound")

    def margins(horizon):
        literal, within = [], []
        for k, pos in zip(picks, positions):
            b = pb.grid.points[k]
            lb = relaxation_lower_bound(vm, b, int(pos))
            rep = evaluate_position_policy(model, model, pb.classifier, inv, horizon, 10_000, seed, int(pos), b)
            literal.append(rep.mean_cost - 2 * rep.std_error - lb)
            within.append(rep.mean_cost + 2 * rep.std_error - lb)
        return np.array(literal), np.array(within)

    def summary(m):
        return f"{int((m >= 0).sum())}/50 (worst {m.min():.3f})"

    literal, within = margins(REGIME_HORIZON)
    ok = bool(np.all(literal >= 0))
    # diagnostic only: a long horizon removes most of the truncated tail cost
    long_literal, long_within = margins(400)
    detail = (
        f"T={REGIME_HORIZON}: lb <= cost - 2SE at {summary(literal)}, lb <= cost + 2SE at {summary(within)}; "
        f"diagnostic T=400: cost - 2SE {summary(long_literal)}, cost + 2SE {summary(long_within)}"
    )
    _finish(6, ok, detail, start, 600)


def test_criterion_7_gap_trend():
    start = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "cfg.json"
        cfg.write_text(json.dumps({"evaluation": {"n_sims": 2000}, "output_dir": str(Path(tmp) / "out")}))
        assert cli_main(["experiment", "--config", str(cfg)]) == 0
        with open(Path(tmp) / "out" / "fig_gap.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
    sizes = [int(r["dataset_size"]) for r in rows]
    gap = np.array([float(r["best_gap"]) for r in rows])
    se = np.array([float(r["best_std_error"]) for r in rows])
    slack = 2 * np.sqrt(se[1:] ** 2 + se[:-1] ** 2)
    monotone = bool(np.all(gap[1:] <= gap[:-1] + slack))
    ok = sizes == [5, 10, 25, 50, 100, 250] and monotone and gap[-1] < gap[0]
    detail = f"best gaps {', '.join(f'{s}:{v:.2f}' for s, v in zip(sizes, gap))}; non-increasing within 2 combined SE={monotone}"
    _finish(7, ok, detail, start, 1800)


def test_criterion_8_probability_matching():
    start = time.perf_counter()

    def worst_tv(model, inv_params, n_beliefs, n_seeds):
        inv = InventoryModel(model, **inv_params)
        worst, noise = 0.0, 0.0
        for b in np.random.default_rng(8).dirichlet(np.ones(model.n_states), size=n_beliefs):
            hp = HeuristicPolicy(inv, b)
            # sigma-mixture from the filter directly, not from the policy's own table
            sig = sigma(model, b).reshape(-1)
            k = hp._pos(0)
            mix: dict = {}
            for o, a in zip(hp.obs, hp.levels[:, k]):
                mix[int(a)] = mix.get(int(a), 0.0) + float(sig[o])
            counts: dict = {}
            for seed in range(n_seeds):
                a = hp.action(0, seed)
                counts[a] = counts.get(a, 0) + 1
            tv = 0.5 * sum(abs(counts.get(a, 0) / n_seeds - mix.get(a, 0.0)) for a in set(counts) | set(mix))
            worst = max(worst, tv)
            noise = max(noise, 0.4 * sum(np.sqrt(p * (1 - p)) for p in mix.values()) / np.sqrt(n_seeds))
        return worst, noise

    tv, _ = worst_tv(partition_demo_model(), PARTITION_INVENTORY, 10, 10_000)
    diag_tv, diag_noise = worst_tv(regime_demand_model(), REGIME_INVENTORY, 3, 10_000)
    detail = (
        f"partition instance, 10 beliefs x 10000 seeds: max TV {tv:.4f} (need < 0.02); "
        f"regime instance diagnostic: max TV {diag_tv:.4f} vs sampling-noise scale {diag_noise:.4f}"
    )
    _finish(8, tv < 0.02, detail, start)


def test_criterion_9_cli_determinism():
    start = time.perf_counter()
    tiny = {
        "true_model": {"preset": "partition"},
        "inventory": PARTITION_INVENTORY,
        "grid": {"N": 400, "d": 2, "K": 20, "mc_samples": 500},
        "training": {"n_states": 2, "dataset_sizes": [3, 6], "trajectory_length": 20, "n_restarts": 2, "em_max_iters": 30},
        "evaluation": {"horizon": 20, "n_sims": 100},
        "bound": {"positions": [0, 4], "n_sims": 50, "horizon": 20},
        "mesh_resolution": 8,
    }
    differing = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "cfg.json"
        cfg.write_text(json.dumps(tiny))
        common = ["--config", str(cfg), "--seed", "11"]
        runs = {}
        for rep in ("a", "b"):
            out = tmp / rep
            base = [*common, "--output-dir", str(out)]
            codes = [
                cli_main(["gen-data", *base]),
                cli_main(["train-hmm", *base, "--data", str(out / "data" / "dataset_6.csv")]),
                cli_main(["build-policy", *base, "--model", str(out / "hmm_dataset_6.json")]),
                cli_main(["evaluate", *base, "--classifier", str(out / "policy" / "classifier.json"), "--eval-model", str(out / "hmm_dataset_6.json")]),
                cli_main(["experiment", *base]),
                cli_main(["bound", *base]),
            ]
            assert codes == [0] * 6, codes
            runs[rep] = {
                os.path.relpath(os.path.join(d, f), out): open(os.path.join(d, f), "rb").read()
                for d, _, files in os.walk(out)
                for f in files
            }
        names = sorted(runs["a"])
        differing = [n for n in names if runs["a"][n] != runs["b"].get(n)]
        ok = not differing and names == sorted(runs["b"])
    detail = f"6 subcommands, {len(names)} output files byte-identical across reruns" if ok else f"differing files: {differing}"
    _finish(9, ok, detail, start)


if __name__ == "__main__":
    wanted = {int(a) for a in sys.argv[1:]}
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    for fn in tests:
        if wanted and int(fn.__name__.split("_")[2]) not in wanted:
            continue
        try:
            fn()
        except AssertionError:
            pass
    print("\n".join(lines()))
    sys.exit(0 if all(line.split()[2] == "PASS" for line in lines()) else 1)
