"""Volume-removal query selection over on-policy trajectory pairs.

Between posterior updates the trainer offers one candidate pair per rollout
batch; the buffer keeps whichever pair would remove the most posterior volume
under the worst-case answer, and the due query is issued on an even
environment-step schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .posterior import PreferenceRecord, bt_likelihood_samples


@dataclass
class CandidatePair:
    traj_i: object
    traj_j: object
    ret_i: np.ndarray
    ret_j: np.ndarray
    removal_score: float = float("nan")


def removal_score(pair: CandidatePair, samples) -> float:
    """min over answer orientations of the expected removed posterior mass.

    Both one-minus-likelihood expectations sum to 1 per sample, so the score
    lives in [0, 0.5] with 0.5 attained by maximally ambiguous pairs.
    """
    p = bt_likelihood_samples(samples, pair.ret_i - pair.ret_j)
    e_i_over_j = float(np.mean(1.0 - p))
    return min(e_i_over_j, 1.0 - e_i_over_j)


class QueryBuffer:
    """Best candidate pair since the last issued query.

    mode="max" keeps the argmax-score pair (ties keep the incumbent);
    mode="last" always replaces, which realizes the random-query ablation
    (the last uniformly sampled pair is the one queried).
    """

    def __init__(self, mode="max"):
        if mode not in ("max", "last"):
            raise ValueError(f"unknown buffer mode {mode!r}")
        self.mode = mode
        self.reset()

    def reset(self):
        self.pair = None
        self.best_score = -np.inf

    def consider(self, pair: CandidatePair, samples):
        pair.removal_score = removal_score(pair, samples)
        if self.mode == "last" or pair.removal_score > self.best_score:
            self.pair = pair
            self.best_score = pair.removal_score
        return self.pair


def consider_pair(buffer: QueryBuffer, new_pair: CandidatePair, samples):
    return buffer.consider(new_pair, samples)


def sample_pair(trajectories, reward_vector, rng) -> CandidatePair:
    """Uniformly draw 2 distinct trajectories from a rollout batch."""
    i, j = rng.choice(len(trajectories), size=2, replace=False)
    ti, tj = trajectories[i], trajectories[j]
    return CandidatePair(ti, tj, reward_vector.traj_return(ti), reward_vector.traj_return(tj))


@dataclass
class QuerySchedule:
    """Evenly spreads total_queries over total_env_steps."""

    total_queries: int
    total_env_steps: int

    @property
    def steps_between_queries(self):
        return self.total_env_steps / max(1, self.total_queries)

    def due(self, steps_done, n_issued) -> bool:
        if n_issued >= self.total_queries:
            return False
        return steps_done + 1e-9 >= (n_issued + 1) * self.steps_between_queries


def issue_query(buffer: QueryBuffer, channel, query_index) -> PreferenceRecord:
    """Present the buffered pair to the answer provider and record the answer.

    The provider (synthetic oracle or UI bridge) returns 0 if the first
    trajectory is preferred; the record's delta is oriented preferred-first.
    The buffer resets afterwards. Blocks for as long as the provider does.
    """
    if buffer.pair is None:
        raise RuntimeError("no candidate pair buffered")
    pair = buffer.pair
    answer = int(channel.prefer(pair.traj_i, pair.traj_j))
    if answer not in (0, 1):
        raise ValueError(f"provider answer must be 0 or 1, got {answer}")
    if answer == 0:
        delta = pair.ret_i - pair.ret_j
    else:
        delta = pair.ret_j - pair.ret_i
    buffer.reset()
    return PreferenceRecord(np.asarray(delta, dtype=np.float64), query_index)
