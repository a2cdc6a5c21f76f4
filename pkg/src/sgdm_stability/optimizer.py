"""Generalized SGD with momentum, plus coupled runs on neighboring datasets.

The update family is

    m_t = beta * m_{t-1} + g_t,        m_0 = 0
    w_{t+1} = w_t - gamma * g_t - eta * m_t

with beta in [0, 1), gamma >= 0, eta > 0.  Special cases:

* beta = 0 is plain SGD with step size gamma + eta.
* gamma = 0 is the heavy-ball method with step eta.
* eta = beta * gamma is Nesterov's method with step gamma, equivalent to the
  look-ahead form u_t = w_t - gamma * g_t; w_{t+1} = u_t + beta (u_t - u_{t-1}).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dataset import Dataset, NeighborSpec, make_neighbor
from .losses import empirical_risk_many, loss_grad

TRAJ_MAGIC = b"SGDMTRAJ"


class DivergenceError(RuntimeError):
    """Non-finite iterate or gradient entry encountered at `step`."""

    def __init__(self, step: int, which: str = "run"):
        super().__init__(f"non-finite value in {which} at step {step}")
        self.step = step
        self.which = which


@dataclass(frozen=True)
class HyperParams:
    beta: float
    gamma: float
    eta: float
    iterations: int

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.eta <= 0.0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


def hb_params(eta: float, beta: float, iterations: int) -> HyperParams:
    """Heavy-ball hyperparameters: gamma = 0."""
    return HyperParams(beta=beta, gamma=0.0, eta=eta, iterations=iterations)


def nesterov_params(gamma: float, beta: float, iterations: int) -> HyperParams:
    """Nesterov hyperparameters: eta = beta * gamma.  Requires beta > 0.

    At beta = 0 the method is plain SGD with step gamma; callers should use
    that form directly since eta would vanish here.
    """
    if beta <= 0.0:
        raise ValueError("nesterov_params requires beta > 0; use plain SGD for beta = 0")
    return HyperParams(beta=beta, gamma=gamma, eta=beta * gamma, iterations=iterations)


@dataclass(frozen=True)
class SgdmState:
    w: np.ndarray
    m: np.ndarray
    step: int


def sgdm_step(s: SgdmState, g: np.ndarray, hp: HyperParams) -> SgdmState:
    """One momentum update.  Raises DivergenceError on non-finite values."""
    if not np.isfinite(g).all():
        raise DivergenceError(s.step + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        m_new = hp.beta * s.m + g
        w_new = s.w - hp.gamma * g - hp.eta * m_new
    if not np.isfinite(w_new).all():
        raise DivergenceError(s.step + 1)
    return SgdmState(w=w_new, m=m_new, step=s.step + 1)


@dataclass(frozen=True)
class LookaheadState:
    u_prev: np.ndarray
    u_curr: np.ndarray
    w: np.ndarray
    step: int


def lookahead_step(s: LookaheadState, g: np.ndarray, beta: float, gamma: float) -> LookaheadState:
    """One step of the two-sequence Nesterov form.

    u_new = w - gamma * g and the next iterate extrapolates:
    w_new = u_new + beta * (u_new - u_prev), where u_prev is the previous u
    (initialized to w_1, which makes the first step match the momentum form).
    """
    if not np.isfinite(g).all():
        raise DivergenceError(s.step + 1)
    u_new = s.w - gamma * g
    w_new = u_new + beta * (u_new - s.u_curr)
    if not np.isfinite(w_new).all():
        raise DivergenceError(s.step + 1)
    return LookaheadState(u_prev=s.u_curr, u_curr=u_new, w=w_new, step=s.step + 1)


class SampleStream:
    """Deterministic uniform index stream over 1..n, seeded and replayable.

    The k-th index (1-based k) is a pure function of (seed, k): it is the
    k-th draw of a freshly seeded PCG64 generator, so any prefix can be
    regenerated exactly regardless of query order.
    """

    def __init__(self, seed: int, n: int):
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        self.seed = seed
        self.n = n
        self._cache = np.empty(0, dtype=np.int64)

    def _ensure(self, count: int) -> None:
        if count > self._cache.shape[0]:
            size = max(count, 2 * self._cache.shape[0], 1024)
            rng = np.random.default_rng(self.seed)
            self._cache = rng.integers(1, self.n + 1, size=size, dtype=np.int64)

    def index(self, k: int) -> int:
        """1-based index of the k-th sample, k >= 1."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self._ensure(k)
        return int(self._cache[k - 1])

    def prefix(self, count: int) -> np.ndarray:
        """Indices i_1..i_count as an int64 array."""
        self._ensure(count)
        return self._cache[:count].copy()


@dataclass(frozen=True)
class Trajectory:
    """Recorded run: iterates w_1..w_{T+1}, gradients g_1..g_T, indices i_1..i_T.

    `risks` holds the empirical risk of every `risk_stride`-th iterate
    (starting at w_1) when risk recording was requested.
    """

    iterates: np.ndarray
    gradients: np.ndarray
    indices: np.ndarray
    hp: HyperParams
    risks: np.ndarray | None = None
    risk_stride: int = 1

    def __post_init__(self):
        if self.iterates.shape[0] != self.gradients.shape[0] + 1:
            raise ValueError("iterates must be one longer than gradients")
        if self.indices.shape[0] != self.gradients.shape[0]:
            raise ValueError("one sampled index per gradient")

    @property
    def steps(self) -> int:
        return self.gradients.shape[0]


@dataclass(frozen=True)
class CoupledTrace:
    base: Trajectory
    neighbor: Trajectory
    distances: np.ndarray
    perturbed_index: int

    def __post_init__(self):
        if self.distances.shape[0] != self.base.iterates.shape[0]:
            raise ValueError("one distance per iterate")


def momentum_buffers(traj: Trajectory) -> np.ndarray:
    """Replayed momentum buffers m_0..m_T from the recorded gradients."""
    T, d = traj.gradients.shape
    m = np.zeros((T + 1, d))
    for k in range(1, T + 1):
        m[k] = traj.hp.beta * m[k - 1] + traj.gradients[k - 1]
    return m


def replay_matches(traj: Trajectory) -> bool:
    """True when re-applying sgdm_step to the recorded gradients reproduces
    every recorded iterate bit for bit."""
    state = SgdmState(w=traj.iterates[0].copy(), m=np.zeros_like(traj.iterates[0]), step=0)
    for k in range(traj.steps):
        state = sgdm_step(state, traj.gradients[k], traj.hp)
        if not np.array_equal(state.w, traj.iterates[k + 1]):
            return False
    return True


def run(
    d: Dataset,
    kind: str,
    hp: HyperParams,
    w1: np.ndarray,
    stream: SampleStream,
    record_risk: bool = False,
    risk_stride: int = 1,
) -> Trajectory:
    """Run T = hp.iterations steps of generalized momentum SGD on `d`."""
    if stream.n != d.n:
        raise ValueError(f"stream covers 1..{stream.n} but dataset has {d.n} examples")
    w1 = np.asarray(w1, dtype=np.float64)
    if w1.shape != (d.dim,):
        raise ValueError(f"w1 must have shape ({d.dim},), got {w1.shape}")
    T = hp.iterations
    idx = stream.prefix(T)
    iterates = np.empty((T + 1, d.dim))
    gradients = np.empty((T, d.dim))
    iterates[0] = w1
    state = SgdmState(w=w1.copy(), m=np.zeros(d.dim), step=0)
    for k in range(T):
        z = d.examples[idx[k] - 1]
        g = loss_grad(state.w, z, kind)
        state = sgdm_step(state, g, hp)
        gradients[k] = g
        iterates[k + 1] = state.w
    risks = None
    if record_risk:
        if risk_stride < 1:
            raise ValueError(f"risk_stride must be >= 1, got {risk_stride}")
        rows = iterates[::risk_stride]
        risks = empirical_risk_many(rows, d, kind)
    return Trajectory(
        iterates=iterates,
        gradients=gradients,
        indices=idx,
        hp=hp,
        risks=risks,
        risk_stride=risk_stride,
    )


def run_lookahead(
    d: Dataset,
    kind: str,
    beta: float,
    gamma: float,
    iterations: int,
    w1: np.ndarray,
    stream: SampleStream,
) -> np.ndarray:
    """Iterates w_1..w_{T+1} of the look-ahead Nesterov form.

    Gradients are evaluated at the current w, exactly as in `run`; with
    eta = beta * gamma the two forms produce the same trajectory up to
    floating-point rounding.
    """
    if stream.n != d.n:
        raise ValueError(f"stream covers 1..{stream.n} but dataset has {d.n} examples")
    w1 = np.asarray(w1, dtype=np.float64)
    idx = stream.prefix(iterations)
    iterates = np.empty((iterations + 1, d.dim))
    iterates[0] = w1
    state = LookaheadState(u_prev=w1.copy(), u_curr=w1.copy(), w=w1.copy(), step=0)
    for k in range(iterations):
        z = d.examples[idx[k] - 1]
        g = loss_grad(state.w, z, kind)
        state = lookahead_step(state, g, beta, gamma)
        iterates[k + 1] = state.w
    return iterates


def average_iterate(traj: Trajectory, upto: int) -> np.ndarray:
    """Mean of w_1..w_upto (1-based, inclusive)."""
    if not 1 <= upto <= traj.iterates.shape[0]:
        raise ValueError(f"upto must be in 1..{traj.iterates.shape[0]}, got {upto}")
    return traj.iterates[:upto].mean(axis=0)


def coupled_run(
    d: Dataset,
    spec: NeighborSpec,
    kind: str,
    hp: HyperParams,
    w1: np.ndarray,
    stream: SampleStream,
) -> CoupledTrace:
    """Run the same seeded algorithm on `d` and on its neighbor.

    Both runs consume the identical index sequence, so the trajectories agree
    exactly until the perturbed index is first sampled.
    """
    neighbor_data = make_neighbor(d, spec)
    try:
        base = run(d, kind, hp, w1, stream)
    except DivergenceError as e:
        raise DivergenceError(e.step, "base") from None
    try:
        neighbor = run(neighbor_data, kind, hp, w1, stream)
    except DivergenceError as e:
        raise DivergenceError(e.step, "neighbor") from None
    with np.errstate(over="ignore"):
        distances = np.linalg.norm(base.iterates - neighbor.iterates, axis=1)
    if not np.isfinite(distances).all():
        # both runs are finite but the squared gap exceeds float range
        step = int(np.flatnonzero(~np.isfinite(distances))[0])
        raise DivergenceError(step)
    return CoupledTrace(
        base=base, neighbor=neighbor, distances=distances, perturbed_index=spec.index
    )


def coupled_distance_series(
    d: Dataset,
    spec: NeighborSpec,
    kind: str,
    hp: HyperParams,
    w1: np.ndarray,
    stream: SampleStream,
    stride: int,
) -> np.ndarray:
    """Distances ||w_t - w'_t|| sampled every `stride` steps, without keeping
    full trajectories.

    Entry j is the distance after (j+1)*stride steps; the series has
    floor(T / stride) entries.  Both runs advance in lockstep on a stacked
    (2, dim) state, sharing the index stream.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if stream.n != d.n:
        raise ValueError(f"stream covers 1..{stream.n} but dataset has {d.n} examples")
    if kind not in ("logistic", "squared"):
        raise ValueError(f"unknown loss kind {kind!r}")
    w1 = np.asarray(w1, dtype=np.float64)
    T = hp.iterations
    idx = stream.prefix(T)
    rows = d.rows
    repl = spec.replacement
    repl_row = (repl.features.idx0, repl.features.vals, repl.label)
    if not 1 <= spec.index <= d.n:
        raise ValueError(f"neighbor index {spec.index} out of range 1..{d.n}")

    W = np.tile(w1, (2, 1))
    M = np.zeros((2, d.dim))
    beta, gamma, eta = hp.beta, hp.gamma, hp.eta
    logistic = kind == "logistic"
    out = np.empty(T // stride)
    pos = 0
    # overflow is expected on divergent runs; the margin and distance checks
    # below turn it into DivergenceError instead of a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(T):
            i = idx[k]
            ix, vx, y = rows[i - 1]
            if i != spec.index:
                sub = W[:, ix]
                margins = sub @ vx
                if not np.isfinite(margins).all():
                    raise DivergenceError(k + 1)
                if logistic:
                    scales = -y * expit(-y * margins)
                else:
                    scales = margins - y
                if beta:
                    M *= beta
                else:
                    M[:] = 0.0
                M[:, ix] += scales[:, None] * vx
                W -= eta * M
                if gamma:
                    W[:, ix] -= (gamma * scales)[:, None] * vx
            else:
                if beta:
                    M *= beta
                else:
                    M[:] = 0.0
                for row, (jx, jv, jy) in ((0, rows[i - 1]), (1, repl_row)):
                    mrow = float(W[row, jx] @ jv) if jx.size else 0.0
                    if not np.isfinite(mrow):
                        raise DivergenceError(k + 1, "base" if row == 0 else "neighbor")
                    if logistic:
                        s = -jy * float(expit(-jy * mrow))
                    else:
                        s = mrow - jy
                    M[row, jx] += s * jv
                    if gamma:
                        W[row, jx] -= gamma * s * jv
                W -= eta * M
            if (k + 1) % stride == 0:
                dist = float(np.linalg.norm(W[0] - W[1]))
                # a non-finite value here means an iterate blew up or the
                # squared gap left float range; either way the run diverged
                if not math.isfinite(dist) or not np.isfinite(W).all():
                    raise DivergenceError(k + 1)
                out[pos] = dist
                pos += 1
    return out


def write_trajectory_csv(traj: Trajectory, path, distances: np.ndarray | None = None) -> None:
    """One row per iterate: step, sampled index, risk (blank unless recorded at
    that step), iterate norm, and the coupled distance when given."""
    import csv

    header = ["step", "index", "risk", "iterate_norm"]
    if distances is not None:
        header.append("distance")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(traj.iterates.shape[0]):
            index = int(traj.indices[k]) if k < traj.steps else ""
            risk = ""
            if traj.risks is not None and k % traj.risk_stride == 0:
                j = k // traj.risk_stride
                if j < traj.risks.shape[0]:
                    risk = repr(float(traj.risks[j]))
            row = [k + 1, index, risk, repr(float(np.linalg.norm(traj.iterates[k])))]
            if distances is not None:
                row.append(repr(float(distances[k])))
            writer.writerow(row)


def write_iterates_bin(iterates: np.ndarray, path) -> None:
    """Binary dump: magic, dim, count as a 16-byte header, then little-endian
    float64 iterates in row order."""
    arr = np.ascontiguousarray(iterates, dtype="<f8")
    count, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<II", dim, count))
        fh.write(arr.tobytes())


def read_iterates_bin(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != TRAJ_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {TRAJ_MAGIC!r}")
        dim, count = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.shape[0] != dim * count:
        raise ValueError(f"expected {dim * count} float64 values, got {data.shape[0]}")
    return data.reshape(count, dim).astype(np.float64)
