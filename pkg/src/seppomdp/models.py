"""Ready-made model instances used by the demos, tests and the default CLI config."""
import numpy as np

from .hmm import EmissionConvention, HiddenMarkovModel, gaussian_hmm

REGIME_TRANSITION = np.array(
    [
        [0.7, 0.2, 0.1],
        [0.3, 0.5, 0.2],
        [0.3, 0.3, 0.4],
    ]
)
REGIME_MEANS = np.array([[10.0, 8.0], [20.0, 10.0], [25.0, 12.0]])
REGIME_COVARIANCES = np.array(
    [
        [[5.0, 1.0], [1.0, 5.0]],
        [[10.0, 1.0], [1.0, 10.0]],
        [[15.0, 1.0], [1.0, 15.0]],
    ]
)
# beta, tau, p_tilde, h_tilde, horizon
REGIME_INVENTORY = dict(beta=0.93, tau=2, p_tilde=3.0, h_tilde=1.0)
REGIME_HORIZON = 65


def regime_demand_model(n_std: float = 4.0) -> HiddenMarkovModel:
    """Three-regime demand model with discretized bivariate normal (demand, AOD) emissions."""
    return gaussian_hmm(REGIME_TRANSITION, REGIME_MEANS, REGIME_COVARIANCES, n_std=n_std)


PARTITION_U = np.array(
    [
        [0.75, 0.125, 0.125],
        [0.125, 0.75, 0.125],
        [0.125, 0.125, 0.75],
    ]
)
PARTITION_Q = np.array(
    [
        [0.9, 0.05, 0.05],
        [0.05, 0.9, 0.05],
        [0.05, 0.05, 0.9],
    ]
)
PARTITION_Y = np.array(
    [
        [0.75, 0.1, 0.05, 0.05, 0.05],
        [0.05, 0.075, 0.75, 0.075, 0.05],
        [0.05, 0.05, 0.05, 0.1, 0.75],
    ]
)
PARTITION_INVENTORY = dict(beta=0.9, tau=2, p_tilde=70.0, h_tilde=10.0)


def partition_demo_model() -> HiddenMarkovModel:
    """Small 3-state model with demand in {1..5} and three AOD symbols.

    Demand and AOD are conditionally independent given the *current* state,
    ``P[y'=l, x'=k, u'=j | u=i] = U(i, j) Q(i, k) Y(i, l)``.
    """
    E = PARTITION_Y[:, :, None] * PARTITION_Q[:, None, :]
    return HiddenMarkovModel(
        PARTITION_U,
        E,
        y_support=np.arange(1, 6),
        x_support=np.arange(1, 4),
        emission_convention=EmissionConvention.CONDITION_ON_CURRENT,
    )


def deterministic_model(demand: int = 2, aod: int = 0) -> HiddenMarkovModel:
    """One latent state that always emits ``(demand, aod)``."""
    return HiddenMarkovModel(np.ones((1, 1)), np.ones((1, 1, 1)), [demand], [aod])
