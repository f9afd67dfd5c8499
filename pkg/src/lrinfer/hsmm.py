"""Hidden semi-Markov models: segmental inference with duration modeling.

Each latent state emits a variable-length run of continuous frames; run
lengths follow a per-state Poisson distribution truncated to {1, ..., M}
and frames are diagonal Gaussians.  The evidence sums over every
segmentation whose durations add up exactly to the frame count and every
state sequence:

    B[t, z_prev] = sum over next state z' and duration l of
                   p(z' | z_prev) p(l | z') emis(t, l, z') B[t + l, z']

Grouping the duration/emission inner sum per candidate state first leaves
one transition contraction per boundary, so the backend swap (dense vs
low-rank) applies exactly as in the Markov case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hypergraph import ScoreMatrix
from .numeric import ScaledVector, as_matrix, as_vector

__all__ = [
    "HsmmModel",
    "duration_pmf",
    "log_marginal",
    "sample",
    "gaussian_log_likelihoods",
]

_ROW_SUM_TOL = 1e-10


class HsmmModel:
    """State transitions, truncated-Poisson durations, diagonal Gaussians."""

    def __init__(self, start, transition: ScoreMatrix, log_lambda, max_duration: int, means, variances):
        self.start = as_vector(start)
        self.transition = transition
        self.log_lambda = as_vector(log_lambda)
        self.max_duration = int(max_duration)
        self.means = as_matrix(means)
        self.variances = as_matrix(variances)

        n = self.start.size
        if transition.head_dim != n or transition.tail_dim != n:
            raise ValueError("transition shape does not match the state count")
        if self.log_lambda.size != n:
            raise ValueError("one Poisson rate per state required")
        if self.max_duration < 1:
            raise ValueError("max duration must be >= 1")
        if self.means.shape[0] != n or self.variances.shape != self.means.shape:
            raise ValueError("Gaussian parameter shapes do not match the state count")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be strictly positive")
        if np.any(self.start < 0) or abs(self.start.sum() - 1.0) > _ROW_SUM_TOL:
            raise ValueError("start distribution must be nonnegative and sum to 1")
        if np.max(np.abs(transition.row_masses() - 1.0)) > _ROW_SUM_TOL:
            raise ValueError("transition rows must sum to 1")

    @property
    def n_states(self) -> int:
        return self.start.size

    @property
    def frame_dim(self) -> int:
        return self.means.shape[1]

    def log_duration_table(self) -> np.ndarray:
        """(n_states, M) table of log p(duration | state)."""
        return np.vstack([np.log(duration_pmf(self, z)) for z in range(self.n_states)])


def duration_pmf(m: HsmmModel, state: int) -> np.ndarray:
    """Poisson pmf over durations {1, ..., M}, renormalized."""
    lam_log = float(m.log_lambda[state])
    lengths = np.arange(1, m.max_duration + 1)
    log_pmf = lengths * lam_log - math.exp(lam_log) - np.array(
        [math.lgamma(l + 1) for l in lengths]
    )
    log_pmf -= np.max(log_pmf)
    pmf = np.exp(log_pmf)
    return pmf / pmf.sum()


def gaussian_log_likelihoods(m: HsmmModel, frames) -> np.ndarray:
    """(T, n_states) per-frame diagonal-Gaussian log densities."""
    x = as_matrix(frames)
    if x.shape[1] != m.frame_dim:
        raise ValueError(f"frames have dim {x.shape[1]}, model expects {m.frame_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("frames must be finite")
    inv_var = 1.0 / m.variances
    quad = (x * x) @ inv_var.T - 2.0 * (x @ (m.means * inv_var).T)
    quad += np.sum(m.means * m.means * inv_var, axis=1)[None, :]
    log_norm = np.sum(np.log(m.variances), axis=1) + m.frame_dim * math.log(2.0 * math.pi)
    return -0.5 * (quad + log_norm[None, :])


def log_marginal(m: HsmmModel, frames) -> float:
    """log p(frames): sum over segmentations covering the sequence exactly."""
    x = as_matrix(frames)
    T = x.shape[0]
    if T < 1:
        raise ValueError("need at least one frame")
    L, M = m.n_states, m.max_duration

    frame_ll = gaussian_log_likelihoods(m, x)
    cum_ll = np.zeros((T + 1, L))
    np.cumsum(frame_ll, axis=0, out=cum_ll[1:])
    log_dur = m.log_duration_table()

    # suffix[t] covers frames t.. given the previous state; suffix[T] = 1.
    suffix: list[ScaledVector | None] = [None] * (T + 1)
    suffix[T] = ScaledVector.ones(L)
    for t in range(T - 1, 0, -1):
        inner = _segment_sum(m, t, T, cum_ll, log_dur, suffix)
        suffix[t] = ScaledVector(
            m.transition.apply(inner.values), inner.log_scale
        ).renormalize()

    first = _segment_sum(m, 0, T, cum_ll, log_dur, suffix)
    total = float(m.start @ first.values)
    if total == 0.0:
        return -math.inf
    return math.log(total) + first.log_scale


def _segment_sum(m, t, T, cum_ll, log_dur, suffix) -> ScaledVector:
    """Sum over durations of p(l | z) * segment emission * continuation."""
    acc: ScaledVector | None = None
    for l in range(1, min(m.max_duration, T - t) + 1):
        log_w = log_dur[:, l - 1] + (cum_ll[t + l] - cum_ll[t])
        peak = float(np.max(log_w))
        nxt = suffix[t + l]
        term = ScaledVector(
            nxt.values * np.exp(log_w - peak), nxt.log_scale + peak
        )
        if acc is None:
            acc = term
        else:
            if term.log_scale < acc.log_scale:
                acc, term = term, acc
            acc = ScaledVector(
                term.values + acc.values * math.exp(acc.log_scale - term.log_scale),
                term.log_scale,
            )
    return acc.renormalize()


def sample(m: HsmmModel, min_frames: int, seed):
    """Ancestral sample until at least ``min_frames`` frames, then truncate.

    Returns (segments, frames) where segments is a list of
    (state, length) pairs after truncation.
    """
    if min_frames < 1:
        raise ValueError("min_frames must be >= 1")
    rng = np.random.default_rng(seed)
    segments: list[tuple[int, int]] = []
    total = 0
    state = int(rng.choice(m.n_states, p=m.start))
    while total < min_frames:
        dur = int(rng.choice(np.arange(1, m.max_duration + 1), p=duration_pmf(m, state)))
        dur = min(dur, min_frames - total)
        segments.append((state, dur))
        total += dur
        if total < min_frames:
            row = m.transition.row(state)
            state = int(rng.choice(m.n_states, p=row / row.sum()))
    frames = np.empty((total, m.frame_dim))
    pos = 0
    for state, dur in segments:
        noise = rng.standard_normal((dur, m.frame_dim))
        frames[pos:pos + dur] = m.means[state] + noise * np.sqrt(m.variances[state])
        pos += dur
    return segments, frames
