"""Discrete hidden Markov models for joint demand / auxiliary-observation data.

A model couples a latent Markov chain ``u`` with a joint emission table over
``(y, x)`` pairs, where ``y`` is demand and ``x`` is an auxiliary observation.
Beliefs are plain 1-d numpy arrays over the latent states.

Two emission conventions are supported:

* ``CONDITION_ON_NEXT``: ``P[y', x', u' | u] = U(u, u') E(u')(y', x')``
* ``CONDITION_ON_CURRENT``: ``P[y', x', u' | u] = U(u, u') E(u)(y', x')``
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROB_TOL = 1e-9


class InvalidArgumentError(ValueError):
    """Raised for malformed inputs (shapes, non-stochastic matrices, ...)."""


class ImpossibleObservationError(ValueError):
    """Raised when an observation has zero probability under the model."""


class NonConvergenceError(RuntimeError):
    """Raised when an iterative solver runs out of iterations and the caller asked for strictness."""


class EmissionConvention(str, enum.Enum):
    CONDITION_ON_NEXT = "CONDITION_ON_NEXT"
    CONDITION_ON_CURRENT = "CONDITION_ON_CURRENT"


def as_belief(belief, n_states: int | None = None) -> np.ndarray:
    """Validate ``belief`` as a probability vector and return it as a float array."""
    b = np.asarray(belief, dtype=float)
    if b.ndim != 1:
        raise InvalidArgumentError(f"belief must be 1-d, got shape {b.shape}")
    if n_states is not None and b.shape[0] != n_states:
        raise InvalidArgumentError(f"belief has length {b.shape[0]}, model has {n_states} states")
    if np.any(b < -PROB_TOL) or np.any(b > 1 + PROB_TOL) or abs(b.sum() - 1.0) > PROB_TOL:
        raise InvalidArgumentError(f"not a probability vector: {b}")
    return b


def uniform_belief(n_states: int) -> np.ndarray:
    return np.full(n_states, 1.0 / n_states)


def _check_stochastic(mat: np.ndarray, what: str) -> None:
    if np.any(mat < 0) or not np.all(np.isfinite(mat)):
        raise InvalidArgumentError(f"{what} has negative or non-finite entries")
    sums = mat.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > PROB_TOL):
        raise InvalidArgumentError(f"{what} rows must sum to 1, got {sums}")


@dataclass(frozen=True, eq=False)
class HiddenMarkovModel:
    """Latent transition matrix plus a per-state joint PMF over (demand, AOD).

    ``emission[u, i, k]`` is the probability of ``(y_support[i], x_support[k])``
    in the state designated by ``emission_convention``.
    """

    transition: np.ndarray
    emission: np.ndarray
    y_support: np.ndarray
    x_support: np.ndarray
    emission_convention: EmissionConvention = EmissionConvention.CONDITION_ON_NEXT

    def __post_init__(self):
        U = np.array(self.transition, dtype=float)
        E = np.array(self.emission, dtype=float)
        ys = np.array(self.y_support, dtype=int).reshape(-1)
        xs = np.array(self.x_support, dtype=int).reshape(-1)
        if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] < 1:
            raise InvalidArgumentError(f"transition must be square, got {U.shape}")
        if E.shape != (U.shape[0], ys.size, xs.size):
            raise InvalidArgumentError(
                f"emission shape {E.shape} != (n_states, |Y|, |X|) = {(U.shape[0], ys.size, xs.size)}"
            )
        if ys.size == 0 or xs.size == 0:
            raise InvalidArgumentError("supports must be nonempty")
        if np.any(np.diff(ys) <= 0) or np.any(np.diff(xs) <= 0):
            raise InvalidArgumentError("supports must be strictly ascending")
        _check_stochastic(U, "transition")
        _check_stochastic(E.reshape(E.shape[0], -1), "emission")
        conv = EmissionConvention(self.emission_convention)
        for arr in (U, E, ys, xs):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", U)
        object.__setattr__(self, "emission", E)
        object.__setattr__(self, "y_support", ys)
        object.__setattr__(self, "x_support", xs)
        object.__setattr__(self, "emission_convention", conv)
        flat = E.reshape(E.shape[0], -1)
        flat.setflags(write=False)
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_y_pos", {int(v): i for i, v in enumerate(ys)})
        object.__setattr__(self, "_x_pos", {int(v): i for i, v in enumerate(xs)})

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_obs(self) -> int:
        return self.y_support.size * self.x_support.size

    @property
    def next_emits(self) -> bool:
        return self.emission_convention is EmissionConvention.CONDITION_ON_NEXT

    @property
    def flat_emission(self) -> np.ndarray:
        """Emission table reshaped to ``(n_states, |Y| * |X|)``; column ``i * |X| + k``."""
        return self._flat

    @property
    def demand_pmf(self) -> np.ndarray:
        """Per-state marginal PMF of demand, shape ``(n_states, |Y|)``."""
        return self.emission.sum(axis=2)

    def obs_index(self, y, x) -> int:
        """Flat index of observation ``(y, x)``; raises if outside the supports."""
        try:
            return self._y_pos[int(y)] * self.x_support.size + self._x_pos[int(x)]
        except KeyError:
            raise ImpossibleObservationError(f"observation ({y}, {x}) is outside the model supports") from None

    def obs_indices(self, ys, xs) -> np.ndarray:
        return np.array([self.obs_index(y, x) for y, x in zip(ys, xs)], dtype=int)

    def obs_values(self, flat_idx):
        """Inverse of :meth:`obs_index` for arrays of flat indices."""
        flat_idx = np.asarray(flat_idx)
        nx = self.x_support.size
        return self.y_support[flat_idx // nx], self.x_support[flat_idx % nx]

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        emission = []
        for u in range(self.n_states):
            cells = {}
            for i, y in enumerate(self.y_support):
                for k, x in enumerate(self.x_support):
                    p = float(self.emission[u, i, k])
                    if p != 0.0:
                        cells[f"{int(y)},{int(x)}"] = p
            emission.append(cells)
        return {
            "n_states": self.n_states,
            "transition": self.transition.tolist(),
            "emission": emission,
            "emission_convention": self.emission_convention.value,
            "y_support": self.y_support.tolist(),
            "x_support": self.x_support.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HiddenMarkovModel":
        ys = np.asarray(data["y_support"], dtype=int)
        xs = np.asarray(data["x_support"], dtype=int)
        n = int(data["n_states"])
        if len(data["emission"]) != n:
            raise InvalidArgumentError("emission must list one table per state")
        y_pos = {int(v): i for i, v in enumerate(ys)}
        x_pos = {int(v): i for i, v in enumerate(xs)}
        E = np.zeros((n, ys.size, xs.size))
        for u, cells in enumerate(data["emission"]):
            for key, p in cells.items():
                y, x = (int(v) for v in key.split(","))
                if y not in y_pos or x not in x_pos:
                    raise InvalidArgumentError(f"emission key {key!r} outside supports")
                E[u, y_pos[y], x_pos[x]] = float(p)
        return cls(
            transition=np.asarray(data["transition"], dtype=float),
            emission=E,
            y_support=ys,
            x_support=xs,
            emission_convention=data.get("emission_convention", EmissionConvention.CONDITION_ON_NEXT),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "HiddenMarkovModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "HiddenMarkovModel":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class Trajectory:
    """One simulated or observed path; ``latents`` is ``None`` for observed data."""

    demands: np.ndarray
    aods: np.ndarray
    latents: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.demands, dtype=int).reshape(-1)
        a = np.asarray(self.aods, dtype=int).reshape(-1)
        if d.shape != a.shape:
            raise InvalidArgumentError("demands and aods must have equal length")
        object.__setattr__(self, "demands", d)
        object.__setattr__(self, "aods", a)
        if self.latents is not None:
            lat = np.asarray(self.latents, dtype=int).reshape(-1)
            if lat.shape != d.shape:
                raise InvalidArgumentError("latents must match the observation length")
            object.__setattr__(self, "latents", lat)

    def __len__(self) -> int:
        return self.demands.size


# -- sampling ----------------------------------------------------------


def _inverse_cdf(cum: np.ndarray, last: np.ndarray, rows: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Vectorized categorical draw: row ``rows[m]`` of cumulative table ``cum``, uniform ``r[m]``."""
    # searchsorted(side="right") counts the entries <= r, grouped by source row
    idx = np.empty(r.shape, dtype=np.int64)
    for k in np.unique(rows):
        sel = rows == k
        idx[sel] = np.searchsorted(cum[k], r[sel], side="right")
    return np.minimum(idx, last[rows])


class _Sampler:
    """Precomputed cumulative tables for drawing ``(u', obs)`` given ``u``."""

    def __init__(self, model: HiddenMarkovModel):
        self.next_emits = model.next_emits
        self.t_cum = np.cumsum(model.transition, axis=1)
        self.t_last = np.array([np.flatnonzero(r > 0)[-1] for r in model.transition])
        self.e_cum = np.cumsum(model.flat_emission, axis=1)
        self.e_last = np.array([np.flatnonzero(r > 0)[-1] for r in model.flat_emission])

    def initial(self, belief: np.ndarray, r: np.ndarray) -> np.ndarray:
        cum = np.cumsum(belief)[None, :]
        last = np.array([np.flatnonzero(belief > 0)[-1]])
        return _inverse_cdf(cum, last, np.zeros(r.size, dtype=int), r)

    def step(self, u: np.ndarray, r_trans: np.ndarray, r_emit: np.ndarray):
        u_next = _inverse_cdf(self.t_cum, self.t_last, u, r_trans)
        src = u_next if self.next_emits else u
        obs = _inverse_cdf(self.e_cum, self.e_last, src, r_emit)
        return u_next, obs


def sample_trajectory(model: HiddenMarkovModel, initial_belief, horizon: int, seed: int) -> Trajectory:
    """Draw ``u_0`` from ``initial_belief`` and simulate ``horizon`` steps.

    The returned latents are ``u_1 .. u_T``; the observations ``(y_t, x_t)``
    are emitted by the state designated by the model's convention.
    """
    b0 = as_belief(initial_belief, model.n_states)
    if horizon < 1:
        raise InvalidArgumentError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    r = rng.random(1 + 2 * horizon)
    sampler = _Sampler(model)
    u = sampler.initial(b0, r[:1])
    latents = np.empty(horizon, dtype=int)
    obs = np.empty(horizon, dtype=int)
    for t in range(horizon):
        u, o = sampler.step(u, r[1 + 2 * t : 2 + 2 * t], r[2 + 2 * t : 3 + 2 * t])
        latents[t] = u[0]
        obs[t] = o[0]
    ys, xs = model.obs_values(obs)
    return Trajectory(demands=ys, aods=xs, latents=latents)


# -- filtering ---------------------------------------------------------


def _joint_update(model: HiddenMarkovModel, beliefs: np.ndarray, lik: np.ndarray) -> np.ndarray:
    """Unnormalized posterior over ``u'`` for a batch: rows of ``beliefs`` and ``lik`` align."""
    if model.next_emits:
        return (beliefs @ model.transition) * lik
    return (beliefs * lik) @ model.transition


def sigma(model: HiddenMarkovModel, belief) -> np.ndarray:
    """One-step predictive PMF of ``(y', x')`` given ``belief``; shape ``(|Y|, |X|)``."""
    b = as_belief(belief, model.n_states)
    w = b @ model.transition if model.next_emits else b
    return np.tensordot(w, model.emission, axes=1)


def lambda_update(model: HiddenMarkovModel, belief, y_obs, x_obs) -> np.ndarray:
    """Bayesian posterior over the next latent state after observing ``(y_obs, x_obs)``.

    Depends only on the belief and the observation; there is no inventory
    state or action argument.
    """
    b = as_belief(belief, model.n_states)
    lik = model.flat_emission[:, model.obs_index(y_obs, x_obs)]
    post = _joint_update(model, b[None, :], lik[None, :])[0]
    total = post.sum()
    if not total > 0:
        raise ImpossibleObservationError(f"observation ({y_obs}, {x_obs}) has zero probability under the belief")
    return post / total


def filter_beliefs(model: HiddenMarkovModel, initial_belief, demands, aods) -> np.ndarray:
    """Beliefs ``b_1 .. b_T`` obtained by repeated :func:`lambda_update`."""
    b = as_belief(initial_belief, model.n_states)
    out = np.empty((len(demands), model.n_states))
    for t, (y, x) in enumerate(zip(demands, aods)):
        b = lambda_update(model, b, y, x)
        out[t] = b
    return out


def forward_log_likelihood(model: HiddenMarkovModel, traj: Trajectory, initial_belief) -> float:
    """``log P[observations | model]`` via the scaled forward recursion."""
    if len(traj) == 0:
        raise InvalidArgumentError("trajectory must be nonempty")
    b = as_belief(initial_belief, model.n_states)
    obs = model.obs_indices(traj.demands, traj.aods)
    ll = 0.0
    for o in obs:
        post = _joint_update(model, b[None, :], model.flat_emission[:, o][None, :])[0]
        c = post.sum()
        if not c > 0:
            raise ImpossibleObservationError("trajectory has zero probability under the model")
        ll += np.log(c)
        b = post / c
    return float(ll)


# -- EM training -------------------------------------------------------


def _random_model(rng, n_states, y_support, x_support, convention) -> HiddenMarkovModel:
    U = rng.dirichlet(np.ones(n_states), size=n_states)
    E = rng.dirichlet(np.ones(y_support.size * x_support.size), size=n_states)
    return HiddenMarkovModel(U, E.reshape(n_states, y_support.size, x_support.size), y_support, x_support, convention)


def _e_step(model: HiddenMarkovModel, groups, b0):
    """Scaled forward-backward over batches of equal-length sequences."""
    n = model.n_states
    U = model.transition
    Ef = model.flat_emission
    trans = np.zeros((n, n))
    emit = np.zeros((model.n_obs, n))
    ll = 0.0
    for obs in groups:
        m, T = obs.shape
        alpha = np.empty((T + 1, m, n))
        scale = np.empty((T, m))
        alpha[0] = b0
        for t in range(T):
            a = _joint_update(model, alpha[t], Ef[:, obs[:, t]].T)
            c = a.sum(axis=1)
            if np.any(c <= 0):
                return -np.inf, None, None
            scale[t] = c
            alpha[t + 1] = a / c[:, None]
        ll += np.log(scale).sum()
        beta = np.ones((m, n))
        for t in range(T - 1, -1, -1):
            lik = Ef[:, obs[:, t]].T
            c = scale[t][:, None]
            if model.next_emits:
                w = lik * beta / c
                xi = np.einsum("mi,ij,mj->mij", alpha[t], U, w)
                gamma = xi.sum(axis=1)
                beta = w @ U.T
            else:
                w = alpha[t] * lik / c
                xi = np.einsum("mi,ij,mj->mij", w, U, beta)
                gamma = xi.sum(axis=2)
                beta = lik * (beta @ U.T) / c
            trans += xi.sum(axis=0)
            np.add.at(emit, obs[:, t], gamma)
    return ll, trans, emit.T


def _m_step(model: HiddenMarkovModel, trans, emit) -> HiddenMarkovModel:
    U = model.transition.copy()
    rs = trans.sum(axis=1)
    ok = rs > 0
    U[ok] = trans[ok] / rs[ok, None]
    E = model.flat_emission.copy()
    es = emit.sum(axis=1)
    ok = es > 0
    E[ok] = emit[ok] / es[ok, None]
    return HiddenMarkovModel(
        U, E.reshape(model.emission.shape), model.y_support, model.x_support, model.emission_convention
    )


def baum_welch(
    data,
    n_states: int,
    seed: int,
    tol: float = 1e-6,
    max_iters: int = 500,
    *,
    y_support=None,
    x_support=None,
    convention=EmissionConvention.CONDITION_ON_NEXT,
    initial_belief=None,
    init_model: HiddenMarkovModel | None = None,
):
    """Fit a discrete HMM to observation sequences by expectation maximization.

    ``initial_belief`` (uniform by default) is the fixed prior over ``u_0``.
    Starting parameters are Dirichlet(1) rows drawn from ``seed`` unless
    ``init_model`` is given. Stops when the log-likelihood gain falls below
    ``tol`` or after ``max_iters`` E-steps.

    Returns ``(model, trace)`` where ``trace[k]`` is the log-likelihood of the
    k-th iterate and the returned model is the last evaluated iterate.
    """
    data = list(data)
    if not data or any(len(tr) == 0 for tr in data):
        raise InvalidArgumentError("data must be a nonempty list of nonempty trajectories")
    if n_states < 1:
        raise InvalidArgumentError("n_states must be >= 1")
    if init_model is not None:
        model = init_model
        n_states = model.n_states
    else:
        ys = np.unique(np.concatenate([tr.demands for tr in data])) if y_support is None else np.asarray(y_support)
        xs = np.unique(np.concatenate([tr.aods for tr in data])) if x_support is None else np.asarray(x_support)
        model = _random_model(np.random.default_rng(seed), n_states, ys, xs, EmissionConvention(convention))
    b0 = uniform_belief(n_states) if initial_belief is None else as_belief(initial_belief, n_states)

    by_len: dict[int, list[np.ndarray]] = {}
    for tr in data:
        by_len.setdefault(len(tr), []).append(model.obs_indices(tr.demands, tr.aods))
    groups = [np.array(v) for _, v in sorted(by_len.items())]

    trace: list[float] = []
    for it in range(max_iters):
        ll, trans, emit = _e_step(model, groups, b0)
        if not np.isfinite(ll):
            raise InvalidArgumentError("data has zero probability under the initial model")
        trace.append(float(ll))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        if it == max_iters - 1:
            break
        model = _m_step(model, trans, emit)
    return model, trace


# -- discretized Gaussian emissions ------------------------------------


def discretize_gaussian_emission(mean, covariance, y_support, x_support) -> np.ndarray:
    """Bivariate normal density on the integer grid ``y_support x x_support``, renormalized."""
    mu = np.asarray(mean, dtype=float).reshape(2)
    cov = np.asarray(covariance, dtype=float)
    if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
        raise InvalidArgumentError("covariance must be a symmetric 2x2 matrix")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InvalidArgumentError("covariance must be positive definite") from None
    ys = np.asarray(y_support, dtype=float)
    xs = np.asarray(x_support, dtype=float)
    if ys.size == 0 or xs.size == 0:
        raise InvalidArgumentError("supports must be nonempty")
    pts = np.stack(np.meshgrid(ys, xs, indexing="ij"), axis=-1) - mu
    z = np.linalg.solve(chol, pts.reshape(-1, 2).T)
    logp = -0.5 * (z * z).sum(axis=0)
    p = np.exp(logp - logp.max()).reshape(ys.size, xs.size)
    return p / p.sum()


def gaussian_grid(means, covariances, n_std: float = 4.0, nonnegative_demand: bool = True):
    """Integer supports covering ``mean +/- n_std`` standard deviations of every state."""
    means = np.asarray(means, dtype=float)
    sds = np.sqrt(np.array([np.diag(c) for c in np.asarray(covariances, dtype=float)]))
    lo = np.floor((means - n_std * sds).min(axis=0)).astype(int)
    hi = np.ceil((means + n_std * sds).max(axis=0)).astype(int)
    if nonnegative_demand:
        lo[0] = max(lo[0], 0)
    return np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1)


def gaussian_hmm(transition, means, covariances, n_std: float = 4.0, convention=EmissionConvention.CONDITION_ON_NEXT):
    """HMM whose per-state emissions are discretized bivariate normals on a shared grid."""
    ys, xs = gaussian_grid(means, covariances, n_std)
    E = np.stack([discretize_gaussian_emission(m, c, ys, xs) for m, c in zip(means, covariances)])
    return HiddenMarkovModel(transition, E, ys, xs, convention)
