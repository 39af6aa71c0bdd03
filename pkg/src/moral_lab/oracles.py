"""Synthetic preference providers for the two environments.

All oracles are pure functions of per-episode objective counts; the noise
wrapper is the only stochastic one. Answers are 0 (first trajectory wins)
or 1.
"""

from __future__ import annotations

import itertools

import numpy as np

from .gridworld import objective_vector


def preference_vector(ratios) -> np.ndarray:
    """Normalize an integer priority ratio like (3, 1, 1) into a distribution."""
    v = np.asarray(ratios, dtype=np.float64)
    if (v <= 0).any():
        raise ValueError("preference ratios must be positive")
    return v / v.sum()


def ratio_set(mode="distinct"):
    """Priority ratios over (deliver, help, clean).

    "all" is the full {1,2,3}^3 grid (27); "distinct" drops proportional
    duplicates, i.e. collapses (1,1,1)/(2,2,2)/(3,3,3), leaving 25.
    """
    ratios = list(itertools.product((1, 2, 3), repeat=3))
    if mode == "all":
        return ratios
    if mode == "distinct":
        seen, out = set(), []
        for r in ratios:
            key = tuple(np.round(preference_vector(r), 12))
            if key not in seen:
                seen.add(key)
                out.append(r)
        return out
    raise ValueError(f"unknown ratio set mode {mode!r}")


def kl_deviation(counts, m) -> float:
    """D_KL(normalized counts || m); +inf for an all-zero count vector."""
    s = np.asarray(counts, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    total = s.sum()
    if total <= 0.0:
        return float("inf")
    sbar = s / total
    mask = sbar > 0.0
    if (m[mask] <= 0.0).any():
        return float("inf")
    return float(np.sum(sbar[mask] * np.log(sbar[mask] / m[mask])))


def emergency_prefer(traj_a, traj_b) -> int:
    """More people saved wins; ties go to more extinguisher steps, then to a."""
    ca, cb = traj_a.counts, traj_b.counts
    if ca["people_saved"] != cb["people_saved"]:
        return 0 if ca["people_saved"] > cb["people_saved"] else 1
    if ca["extinguisher_steps"] != cb["extinguisher_steps"]:
        return 0 if ca["extinguisher_steps"] > cb["extinguisher_steps"] else 1
    return 0


def delivery_prefer(traj_a, traj_b, m) -> int:
    """Smaller KL divergence of the normalized objective counts to m wins."""
    da = kl_deviation(objective_vector(traj_a), m)
    db = kl_deviation(objective_vector(traj_b), m)
    return 0 if da <= db else 1


def adversarial_prefer(traj_a, traj_b) -> int:
    """More vases broken wins; ties go to a."""
    va, vb = traj_a.counts["vases_broken"], traj_b.counts["vases_broken"]
    return 0 if va >= vb else 1


def noisy_wrap(inner_answer, p_noise, rng: np.random.Generator) -> int:
    """With probability p_noise return a uniformly random answer."""
    if not 0.0 <= p_noise <= 1.0:
        raise ValueError("p_noise must be in [0, 1]")
    if rng.random() < p_noise:
        return int(rng.integers(2))
    return int(inner_answer)


class LexicographicOracle:
    kind = "lexicographic"

    def prefer(self, traj_a, traj_b):
        return emergency_prefer(traj_a, traj_b)


class KLOracle:
    kind = "kl"

    def __init__(self, ratios):
        self.m = preference_vector(ratios)

    def prefer(self, traj_a, traj_b):
        return delivery_prefer(traj_a, traj_b, self.m)


class AdversarialVaseOracle:
    kind = "adversarial"

    def prefer(self, traj_a, traj_b):
        return adversarial_prefer(traj_a, traj_b)


class NoisyOracle:
    """Wraps another oracle, replacing answers with coin flips at rate p_noise."""

    kind = "noisy"

    def __init__(self, inner, p_noise, rng):
        self.inner = inner
        self.p_noise = p_noise
        self.rng = rng

    def prefer(self, traj_a, traj_b):
        return noisy_wrap(self.inner.prefer(traj_a, traj_b), self.p_noise, self.rng)


def make_oracle(name, *, ratios=None, p_noise=0.0, rng=None):
    """Factory keyed by the config-file oracle name."""
    if name == "lexicographic":
        oracle = LexicographicOracle()
    elif name == "kl":
        if ratios is None:
            raise ValueError("kl oracle needs preference ratios")
        oracle = KLOracle(ratios)
    elif name == "adversarial":
        oracle = AdversarialVaseOracle()
    else:
        raise ValueError(f"unknown oracle {name!r}")
    if p_noise > 0.0:
        if rng is None:
            raise ValueError("noisy oracle needs an rng")
        oracle = NoisyOracle(oracle, p_noise, rng)
    return oracle
