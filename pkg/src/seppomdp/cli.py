"""Command-line entry point: ``python -m seppomdp <subcommand> --config cfg.json``.

Exit codes: 0 success, 2 invalid config or arguments, 3 I/O failure,
4 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .evaluation import (
    component_seed,
    build_policy,
    evaluate_policy,
    evaluate_position_policy,
    generate_dataset,
    optimality_gap_experiment,
    train_restarts,
    write_gap_csv,
)
from .hmm import HiddenMarkovModel, InvalidArgumentError, NonConvergenceError, Trajectory
from .solvers import information_relaxation_values, relaxation_lower_bound
from .svm import BasestockClassifier, partition_report

log = logging.getLogger("seppomdp")

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NONCONVERGENCE = 0, 2, 3, 4


def atomic_write(path, write) -> Path:
    """Call ``write(tmp_path)`` and rename the result onto ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _write_text(path, text: str) -> Path:
    return atomic_write(path, lambda p: Path(p).write_text(text))


def _write_rows(path, header, rows) -> Path:
    def write(p):
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    return atomic_write(path, write)


def _num(x) -> str:
    return repr(float(x))


# -- datasets --------------------------------------------------------------

DATA_COLUMNS = ["traj_id", "t", "y", "x"]


def dataset_rows(trajectories) -> list:
    return [
        [j, t + 1, int(y), int(x)]
        for j, tr in enumerate(trajectories)
        for t, (y, x) in enumerate(zip(tr.demands, tr.aods))
    ]


def read_dataset(path) -> list:
    """Trajectories from a ``traj_id, t, y, x`` CSV, ordered by ``traj_id`` then ``t``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != DATA_COLUMNS:
            raise InvalidArgumentError(f"{path}: expected columns {DATA_COLUMNS}")
        by_id: dict = {}
        for row in reader:
            row = {k.strip(): v for k, v in row.items()}
            by_id.setdefault(int(row["traj_id"]), []).append((int(row["t"]), int(row["y"]), int(row["x"])))
    if not by_id:
        raise InvalidArgumentError(f"{path}: no data rows")
    out = []
    for k in sorted(by_id):
        steps = sorted(by_id[k])
        out.append(Trajectory(np.array([s[1] for s in steps]), np.array([s[2] for s in steps])))
    return out


def _out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir)


# -- subcommands -----------------------------------------------------------


def cmd_gen_data(cfg: ExperimentConfig, args) -> list:
    """One dataset CSV per configured size (or ``--n-traj``)."""
    model = cfg.true_hmm()
    sizes = [args.n_traj] if args.n_traj else cfg.training["dataset_sizes"]
    length = args.length or cfg.training["trajectory_length"]
    paths = []
    for k, size in enumerate(sizes):
        if size < 1 or length < 1:
            raise InvalidArgumentError("trajectory count and length must be >= 1")
        seed = component_seed(cfg.seed, "data", 100_000 * k)
        rows = dataset_rows(generate_dataset(model, size, length, seed))
        path = _write_rows(_out(cfg) / "data" / f"dataset_{size}.csv", DATA_COLUMNS, rows)
        print(f"{path}: {len(rows)} rows")
        paths.append(path)
    return paths


def cmd_train_hmm(cfg: ExperimentConfig, args) -> Path:
    """Baum-Welch restarts on a dataset; keeps the restart with the highest likelihood."""
    data = read_dataset(args.data)
    true_model = cfg.true_hmm()
    tr = cfg.training
    fits = train_restarts(
        data, tr["n_states"], tr["n_restarts"], component_seed(cfg.seed, "em"), tr["em_tol"], tr["em_max_iters"],
        true_model.y_support, true_model.x_support,
    )
    best = max(range(len(fits)), key=lambda r: fits[r][1][-1])
    model, trace = fits[best]
    stalled = len(trace) >= max(tr["em_max_iters"], 2) and trace[-1] - trace[-2] >= tr["em_tol"]
    if stalled:
        msg = f"EM restart {best} hit em_max_iters={tr['em_max_iters']} before reaching em_tol"
        if args.strict:
            raise NonConvergenceError(msg)
        log.warning(msg)
    out = Path(args.out) if args.out else _out(cfg) / f"hmm_{Path(args.data).stem}.json"
    _write_text(out, model.to_json())
    rows = [[r, i, _num(ll)] for r, (_, t) in enumerate(fits) for i, ll in enumerate(t)]
    _write_rows(out.with_suffix(".trace.csv"), ["restart", "iteration", "log_likelihood"], rows)
    print(f"{out}: restart {best}, log-likelihood {trace[-1]:.6f}")
    return out


def _load_model(path, cfg) -> HiddenMarkovModel:
    return HiddenMarkovModel.load(path) if path else cfg.true_hmm()


def cmd_build_policy(cfg: ExperimentConfig, args) -> Path:
    """Grid, labels and SVM for a model; writes the classifier, grid and partition mesh."""
    model = _load_model(args.model, cfg)
    g, s = cfg.grid, cfg.svm
    pb = build_policy(
        model, cfg.inventory_params(), N=g["N"], d=g["d"], K=g["K"], n_samples=g["mc_samples"], C_list=s["C_list"],
        max_epochs=s["max_epochs"], tol=s["tol"], method=s["method"], seed=cfg.seed, restarts=g["restarts"],
    )
    out = Path(args.out) if args.out else _out(cfg) / "policy"
    clf_path = _write_text(out / "classifier.json", pb.classifier.to_json())
    _write_text(out / "grid.json", json.dumps(pb.grid.to_dict()))
    n = model.n_states
    _write_rows(
        out / "grid_labels.csv",
        ["grid_index"] + [f"b{i}" for i in range(n)] + ["label", "predicted"],
        [[i, *map(_num, b), int(lab), int(pr)] for i, (b, lab, pr) in enumerate(zip(pb.grid.points, pb.labels, pb.classifier.predict(pb.grid.points)))],
    )
    if n >= 2:
        rep = partition_report(pb.classifier, cfg.mesh_resolution)
        _write_rows(out / "mesh.csv", [f"b{i}" for i in range(n)] + ["label"], [[*map(_num, b), int(lab)] for b, lab in zip(rep.points, rep.labels)])
    acc = ", ".join(f"C={c:g}: {a:.3f}" for c, a in pb.training_accuracy.items())
    print(f"{clf_path}: classes {pb.classifier.classes.tolist()}, training accuracy {acc}")
    return clf_path


def cmd_evaluate(cfg: ExperimentConfig, args) -> Path:
    clf = BasestockClassifier.load(args.classifier)
    true_model = cfg.true_hmm()
    eval_model = _load_model(args.eval_model, cfg)
    ev = cfg.evaluation
    rep = evaluate_policy(true_model, eval_model, clf, cfg.inventory_params(), ev["horizon"], ev["n_sims"], component_seed(cfg.seed, "eval"))
    out = Path(args.out) if args.out else _out(cfg) / "evaluation.csv"
    row = rep.row()
    _write_rows(out, list(row), [[_num(v) if isinstance(v, float) else v for v in row.values()]])
    print(f"{out}: mean cost {rep.mean_cost:.4f} +- {rep.std_error:.4f}")
    return out


def cmd_experiment(cfg: ExperimentConfig, args) -> Path:
    out = _out(cfg)
    done: list = []

    def flush(size_rows):
        done.extend(size_rows)
        write_partial = out / "gap.csv"
        atomic_write(write_partial, lambda p: write_gap_csv(p, done))

    table = optimality_gap_experiment(cfg, on_size=flush)
    summary = table.summary()
    cols = list(summary[0])
    _write_rows(out / "fig_gap.csv", cols, [[_num(r[c]) if isinstance(r[c], float) else r[c] for c in cols] for r in summary])
    print(f"{out / 'gap.csv'}: {len(table.rows)} rows; true-model policy cost {table.true_cost.mean_cost:.4f}")
    for r in summary:
        print(f"  size {r['dataset_size']:>4}: best gap {r['best_gap']:8.4f}  mean gap {r['mean_gap']:8.4f}")
    return out / "gap.csv"


def cmd_bound(cfg: ExperimentConfig, args) -> Path:
    """Relaxation lower bound vs simulated policy cost at every grid belief and tested position."""
    model = _load_model(args.model, cfg)
    inv = cfg.inventory_model(model)
    g, s, bd = cfg.grid, cfg.svm, cfg.bound
    pb = build_policy(
        model, cfg.inventory_params(), N=g["N"], d=g["d"], K=g["K"], n_samples=g["mc_samples"], C_list=s["C_list"],
        max_epochs=s["max_epochs"], tol=s["tol"], method=s["method"], seed=cfg.seed, restarts=g["restarts"],
    )
    clf = BasestockClassifier.load(args.classifier) if args.classifier else pb.classifier
    vm = information_relaxation_values(inv)
    if not vm.result.converged:
        raise NonConvergenceError("relaxation value iteration did not converge")
    seed = component_seed(cfg.seed, "bound")
    rows = []
    n = model.n_states
    for k, b in enumerate(pb.grid.points):
        for pos in bd["positions"]:
            lb = relaxation_lower_bound(vm, b, pos)
            rep = evaluate_position_policy(model, model, clf, inv, bd["horizon"], bd["n_sims"], seed, pos, b)
            rows.append([k, int(pos), *map(_num, b), _num(lb), _num(rep.mean_cost), _num(rep.std_error), int(lb <= rep.mean_cost - 2 * rep.std_error)])
    out = Path(args.out) if args.out else _out(cfg) / "bound.csv"
    header = ["grid_index", "position"] + [f"b{i}" for i in range(n)] + ["lower_bound", "policy_cost", "std_error", "bound_holds"]
    _write_rows(out, header, rows)
    held = sum(r[-1] for r in rows)
    print(f"{out}: {len(rows)} rows, bound below cost - 2 SE in {held}")
    return out


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-hmm": cmd_train_hmm,
    "build-policy": cmd_build_policy,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "bound": cmd_bound,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seppomdp", description="Belief-based base-stock policies for HMM demand.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config; omitted keys take their defaults")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--output-dir", help="output directory (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = add("gen-data", "simulate training datasets from the true model")
    p.add_argument("--n-traj", type=int, help="a single dataset with this many trajectories")
    p.add_argument("--length", type=int, help="trajectory length")
    p = add("train-hmm", "fit an HMM to a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true", help="exit 4 if EM stops at em_max_iters")
    p = add("build-policy", "build the SVM base-stock policy for a model")
    p.add_argument("--model", help="model JSON (default: the config's true model)")
    p.add_argument("--out", help="output directory")
    p = add("evaluate", "Monte Carlo cost of a classifier policy")
    p.add_argument("--classifier", required=True)
    p.add_argument("--eval-model", help="model used for belief updates (default: the true model)")
    p.add_argument("--out")
    add("experiment", "dataset-size sweep of trained-model policies")
    p = add("bound", "full-information lower bound vs simulated policy cost")
    p.add_argument("--model")
    p.add_argument("--classifier", help="policy to evaluate (default: build one)")
    p.add_argument("--out")
    return parser


def load_config(args) -> ExperimentConfig:
    data, base = {}, "."
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"{path}: invalid JSON ({exc})") from None
        base = path.parent
    if args.seed is not None:
        data["seed"] = args.seed
    if args.output_dir is not None:
        data["output_dir"] = args.output_dir
    return ExperimentConfig.from_dict(data, base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        COMMANDS[args.command](cfg, args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (InvalidArgumentError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
