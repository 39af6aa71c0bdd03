"""Bayesian posterior over linear scalarization weights.

The prior is uniform on {w >= 0, ||w||_2 <= 1}. Pairwise preferences enter
through a Bradley-Terry likelihood on trajectory return differences; sampling
uses the hinge-shaped proxy likelihood min(1, exp(w^T delta)), whose log is
concave, with a warm-started random-walk Metropolis chain.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


@dataclass
class PreferenceRecord:
    """One answered query: delta = r(tau_preferred) - r(tau_other)."""

    delta: np.ndarray
    query_index: int

    def to_json(self):
        return {"delta": [float(x) for x in self.delta], "query_index": self.query_index}


@dataclass
class MCMCConfig:
    n_proposals: int = 10000
    burn_in: int = 1000
    thinning: int = 10
    proposal_scale: float = 0.05


def bt_likelihood(w, ret_i, ret_j) -> float:
    """Bradley-Terry p(tau_i > tau_j | w), computed in log space."""
    w = np.asarray(w, dtype=np.float64)
    delta = np.asarray(ret_i, dtype=np.float64) - np.asarray(ret_j, dtype=np.float64)
    return float(expit(w @ delta))


def bt_likelihood_samples(samples, delta) -> np.ndarray:
    """Vectorized p(tau_i > tau_j | w) over a (K, m) sample set."""
    return expit(np.asarray(samples) @ np.asarray(delta, dtype=np.float64))


def proxy_likelihood(w, record: PreferenceRecord) -> float:
    """min(1, exp(w^T delta)): 1 whenever w agrees with the stored preference."""
    z = float(np.asarray(w, dtype=np.float64) @ record.delta)
    return float(np.exp(min(0.0, z)))


def log_proxy_posterior(w, deltas: np.ndarray) -> float:
    """Sum of log proxy factors; deltas is the (K, m) stack of record deltas."""
    if len(deltas) == 0:
        return 0.0
    return float(np.minimum(0.0, deltas @ w).sum())


def in_support(w) -> bool:
    w = np.asarray(w)
    return bool((w >= 0.0).all() and np.linalg.norm(w) <= 1.0)


def sample_prior(rng: np.random.Generator, m: int) -> np.ndarray:
    """One draw, uniform on the nonnegative part of the unit ball."""
    while True:
        w = rng.random(m)
        if np.linalg.norm(w) <= 1.0:
            return w


def sample_prior_batch(rng, m, n) -> np.ndarray:
    out = np.empty((n, m))
    filled = 0
    while filled < n:
        cand = rng.random((max(n, 64), m))
        ok = cand[np.linalg.norm(cand, axis=1) <= 1.0]
        take = min(len(ok), n - filled)
        out[filled:filled + take] = ok[:take]
        filled += take
    return out


def _project(w):
    w = np.maximum(w, 0.0)
    norm = np.linalg.norm(w)
    return w / norm if norm > 1.0 else w


def map_estimate(deltas, m, steps=200, step_size=0.05) -> np.ndarray:
    """Mode of the proxy posterior by projected gradient ascent.

    The log proxy posterior is concave piecewise-linear, so plain ascent with
    projection onto the support converges to (a) mode; with no records every
    in-support point is modal and the start point is returned.
    """
    w = np.full(m, 0.5 / np.sqrt(m))
    if len(deltas) == 0:
        return w
    for _ in range(steps):
        active = deltas @ w < 0.0
        if not active.any():
            break
        w = _project(w + step_size * deltas[active].mean(axis=0))
    return w


@dataclass
class PosteriorState:
    """Thinned post-burn-in weight samples plus the preference record."""

    records: list
    samples: np.ndarray      # (K, m)
    mean_weight: np.ndarray  # (m,)
    mcmc_config: MCMCConfig
    acceptance_rate: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.samples.shape[1]

    def to_json(self):
        return {
            "records": [r.to_json() for r in self.records],
            "mean_weight": [float(x) for x in self.mean_weight],
            "n_samples": int(self.samples.shape[0]),
        }


def mcmc_posterior(records, m, config: MCMCConfig, rng: np.random.Generator,
                   warn=True) -> PosteriorState:
    """Random-walk Metropolis on the proxy posterior, warm-started at its mode.

    Proposals falling outside the prior support are rejected outright. With an
    empty record list the chain targets the prior itself. Samples are the
    post-burn-in states at every `thinning`-th proposal.
    """
    deltas = (np.stack([r.delta for r in records])
              if records else np.zeros((0, m)))
    w = map_estimate(deltas, m)
    logp = log_proxy_posterior(w, deltas)

    n = config.n_proposals
    noise = rng.normal(0.0, config.proposal_scale, size=(n, m))
    log_u = np.log(rng.random(n))
    kept = []
    accepted = 0
    for i in range(n):
        cand = w + noise[i]
        if (cand >= 0.0).all() and cand @ cand <= 1.0:
            cand_logp = log_proxy_posterior(cand, deltas)
            if cand_logp - logp > log_u[i]:
                w, logp = cand, cand_logp
                accepted += 1
        if i >= config.burn_in and (i - config.burn_in) % config.thinning == 0:
            kept.append(w)

    rate = accepted / n
    if warn and not 0.05 <= rate <= 0.95:
        warnings.warn(
            f"MH acceptance rate {rate:.3f} outside [0.05, 0.95] "
            f"(n_records={len(records)}, scale={config.proposal_scale})",
            RuntimeWarning,
        )
    samples = np.stack(kept)
    return PosteriorState(
        records=list(records),
        samples=samples,
        mean_weight=samples.mean(axis=0),
        mcmc_config=config,
        acceptance_rate=rate,
    )


def mean_scalarized_reward(post: PosteriorState, reward_vector):
    """RewardSource computing mean_weight . r(s, a, s'), snapshotting the mean."""
    return reward_vector.source(post.mean_weight.copy())
