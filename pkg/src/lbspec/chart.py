"""Distribution-free multivariate EWMA chart on pooled ranks of spectra.

At step ``n`` the ``N = m0 + n`` pooled observations of each coordinate are
ranked (mid-ranks for ties). The last ``w`` stream items enter an
exponentially weighted rank sum, which is standardized with its exact
moments under exchangeability and squared; ``T_n`` sums these over the ``p``
coordinates.

The signal rule is a conditional permutation test. Random reorderings of the
pooled rows give reference values of ``T_n``; only reorderings under which
the chart would have made the same decisions at the previous
``lookback - 1`` steps are kept. The per-step false-alarm probability given
the recent decisions then stays close to ``alpha``, so the in-control run
length is roughly geometric with mean ``1 / alpha`` and a chart that keeps
running after an alarm still signals at rate about ``alpha``.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional, Protocol

import numba
import numpy as np
from scipy.stats import rankdata


DEFAULT_CAP = 10_000


@dataclass(frozen=True)
class ChartParams:
    """Chart settings.

    ``lookback`` is the number of recent steps (including the current one)
    whose silence the permutation reference is conditioned on; ``None``
    means ``w_max``.
    """

    m0: int = 100
    w_min: int = 1
    w_max: int = 10
    lam: float = 0.01
    alpha: float = 0.05
    p: int = 15
    permutations: int = 2000
    lookback: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.w_min <= self.w_max:
            raise ValueError("need 1 <= w_min <= w_max")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must lie in [0, 1]")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.p < 1 or self.m0 < self.p:
            raise ValueError("need p >= 1 and m0 >= p")
        if self.permutations < 1:
            raise ValueError("permutations must be >= 1")
        if self.lookback is not None and self.lookback < 1:
            raise ValueError("lookback must be >= 1")

    @property
    def depth(self) -> int:
        return self.w_max if self.lookback is None else self.lookback

    def window(self, n: int) -> int:
        return min(max(n, self.w_min), self.w_max)


# --- ranks and moments ------------------------------------------------------


def midranks(values) -> np.ndarray:
    """Ranks ``1..N`` with ties replaced by their average, column-wise for 2-D input."""
    return rankdata(np.asarray(values, dtype=float), method="average", axis=0)


def pooled_ranks(baseline, stream) -> np.ndarray:
    """Mid-ranks of the stream items among all baseline and stream values.

    Works on a single coordinate (1-D inputs) or on all coordinates at once
    (2-D inputs with one row per part).
    """
    baseline = np.asarray(baseline, dtype=float)
    stream = np.asarray(stream, dtype=float)
    pooled = np.concatenate([baseline, stream], axis=0)
    return midranks(pooled)[len(baseline):]


def ewma_weights(w: int, lam: float) -> np.ndarray:
    """Weights ``(1 - lam)**(n - i)`` for the window, oldest item first."""
    return (1.0 - lam) ** np.arange(w - 1, -1, -1, dtype=float)


def weighted_rank_moments(N: int, weights) -> tuple[float, float]:
    """Mean and variance of ``sum c_i R_i`` for ranks drawn without replacement.

    Parameters
    ----------
    N : int
        Number of pooled items; ranks are a random subset of ``1..N``.
    weights : array_like
        ``c_i`` for the ``w <= N`` windowed items.
    """
    c = np.asarray(weights, dtype=float)
    if len(c) > N:
        raise ValueError(f"window of {len(c)} exceeds pool of {N}")
    s1, s2 = float(c.sum()), float(np.dot(c, c))
    mean = (N + 1) / 2 * s1
    var = (N + 1) / 12 * (N * s2 - s1 * s1)
    return mean, max(var, 0.0)


def coordinate_statistics(baseline, stream, params: ChartParams) -> np.ndarray:
    """Standardized weighted rank sums ``T_jn``, one per coordinate."""
    baseline = np.atleast_2d(np.asarray(baseline, dtype=float))
    stream = np.atleast_2d(np.asarray(stream, dtype=float))
    n = len(stream)
    if n < 1:
        raise ValueError("stream is empty")
    N = len(baseline) + n
    w = params.window(n)
    c = ewma_weights(w, params.lam)
    mean, var = weighted_rank_moments(N, c)
    R = pooled_ranks(baseline, stream)[-w:]
    num = c @ R - mean
    tied = np.ptp(np.concatenate([baseline, stream]), axis=0) == 0
    if tied.any():
        warnings.warn(
            f"{int(tied.sum())} coordinate(s) have all values tied and contribute 0",
            RuntimeWarning, stacklevel=2,
        )
    if var == 0:
        return np.zeros(len(num))
    out = num / math.sqrt(var)
    out[tied] = 0.0
    return out


def chart_statistic(baseline, stream, params: ChartParams) -> float:
    """``T_n``: sum of squared standardized rank sums over coordinates."""
    return float(np.sum(coordinate_statistics(baseline, stream, params) ** 2))


# --- conditional permutation reference --------------------------------------


@numba.njit(cache=True)
def _window_stat(R, k, w, lam, mean, sd):
    total = 0.0
    for j in range(R.shape[1]):
        acc = 0.0
        c = 1.0
        for t in range(k, k + w):
            acc += c * R[t, j]
            c *= 1.0 - lam
        z = (acc - mean) / sd
        total += z * z
    return total


@numba.njit(cache=True)
def _random_tails(N, U):
    # partial Fisher-Yates: tail entry t is the item at pooled position N - 1 - t
    B, L = U.shape
    idx = np.arange(N)
    swaps = np.empty(L, dtype=np.int64)
    tails = np.empty((B, L), dtype=np.int64)
    for b in range(B):
        for t in range(L):
            pos = N - 1 - t
            j = min(int(U[b, t] * (pos + 1)), pos)
            swaps[t] = j
            idx[pos], idx[j] = idx[j], idx[pos]
            tails[b, t] = idx[pos]
        for t in range(L - 1, -1, -1):
            pos = N - 1 - t
            j = swaps[t]
            idx[pos], idx[j] = idx[j], idx[pos]
    return tails


@numba.njit(cache=True)
def _permutation_kernel(G, tails, windows, means, sds, thresholds, signalled, lam):
    p = G.shape[1]
    B, L = tails.shape
    d = len(windows)
    Gt = np.empty((L, p))
    R = np.empty((L, p))
    stats = np.full(B, np.nan)
    for b in range(B):
        for t in range(L):
            Gt[t] = G[tails[b, t]]
            R[t] = Gt[t]
        keep = True
        # at lag k the first k tail items are not yet observed; ranks of the
        # rest drop by one per smaller item and a half per tie
        for k in range(1, d):
            for t in range(k, L):
                for j in range(p):
                    h = Gt[k - 1, j]
                    g = Gt[t, j]
                    if h < g:
                        R[t, j] -= 1.0
                    elif h == g:
                        R[t, j] -= 0.5
            s = _window_stat(R, k, windows[k], lam, means[k], sds[k]) if sds[k] > 0 else 0.0
            # keep only reorderings that reproduce the recorded decision
            if (s > thresholds[k]) != signalled[k]:
                keep = False
                break
        if keep:
            stats[b] = _window_stat(Gt, 0, windows[0], lam, means[0], sds[0]) if sds[0] > 0 else 0.0
    return stats


EXACT_LIMIT = 20_000


def tail_length(n: int, params: ChartParams) -> int:
    """Number of trailing pooled positions that the lagged statistics read."""
    d = min(params.depth, n)
    return max(k + params.window(n - k) for k in range(d))


def random_tails(N: int, uniforms) -> np.ndarray:
    """Ordered tails of random permutations of ``range(N)``, one per row of ``uniforms``."""
    return _random_tails(N, np.ascontiguousarray(uniforms, dtype=float))


def exact_tails(N: int, L: int) -> np.ndarray:
    """Every ordered selection of ``L`` distinct items from ``range(N)``."""
    return np.array(list(itertools.permutations(range(N), L)), dtype=np.int64).reshape(-1, L)


def permutation_reference(G, n, m0, params: ChartParams, thresholds, tails, signals=None):
    """Reference values of ``T_n`` over reorderings of the pooled rows.

    Parameters
    ----------
    G : (N, q) ndarray
        Global mid-ranks of the non-constant coordinates.
    n, m0 : int
        Stream length and baseline size, ``N = m0 + n``.
    thresholds : sequence of float
        ``thresholds[k - 1]`` bounds the statistic at lag ``k >= 1``.
    signals : sequence of bool, optional
        ``signals[k - 1]`` is the decision recorded at lag ``k``; by default
        every earlier step was silent.
    tails : (B, L) int ndarray
        Row ``b`` lists the items placed at pooled positions ``N - 1``,
        ``N - 2``, ... by reordering ``b``.

    Returns
    -------
    ndarray
        One value per reordering; NaN where a lagged statistic disagrees
        with the recorded decision.
    """
    d = min(params.depth, n)
    N = m0 + n
    windows = np.array([params.window(n - k) for k in range(d)], dtype=np.int64)
    means, sds = np.empty(d), np.empty(d)
    for k in range(d):
        mean, var = weighted_rank_moments(N - k, ewma_weights(windows[k], params.lam))
        means[k], sds[k] = mean, math.sqrt(var)
    h = np.full(d, np.inf)
    h[1:] = np.asarray(thresholds, dtype=float)[: d - 1]
    sig = np.zeros(d, dtype=np.bool_)
    if signals is not None:
        sig[1:] = np.asarray(signals, dtype=bool)[: d - 1]
    return _permutation_kernel(
        np.ascontiguousarray(G, dtype=float), np.ascontiguousarray(tails, dtype=np.int64),
        windows, means, sds, h, sig, float(params.lam),
    )


def p_value(stat: float, reference: np.ndarray, exact: bool = False) -> float:
    """Permutation p-value; an exact reference already contains the observed order."""
    ref = reference[~np.isnan(reference)]
    count = np.count_nonzero(ref >= stat)
    if exact:
        return count / len(ref) if len(ref) else 1.0
    return (1.0 + count) / (1.0 + len(ref))


def signal_threshold(reference: np.ndarray, alpha: float, exact: bool = False) -> float:
    """Bound ``h`` such that ``T > h`` reproduces ``p_value(T) < alpha``."""
    ref = np.sort(reference[~np.isnan(reference)])[::-1]
    S = len(ref)
    # p < alpha  <=>  #{ref >= T} <= m
    m = math.ceil(alpha * S) - 1 if exact else math.ceil(alpha * (1 + S) - 1) - 1
    if m < 0 or S == 0:
        return math.inf
    if m >= S:
        return -math.inf
    return float(ref[m])


@dataclass(frozen=True)
class StepResult:
    n: int
    statistic: float
    p_value: float
    signal: bool
    threshold: float


@dataclass
class ChartState:
    baseline: np.ndarray
    stream: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    signals: list = field(default_factory=list)
    last_statistic: float = 0.0
    signal: bool = False

    @property
    def n(self) -> int:
        return len(self.stream)


class DFEWMAChart:
    """Phase-II monitoring of spectra against a Phase-I baseline.

    Parameters
    ----------
    baseline : (m0, p) array_like
        In-control spectra.
    params : ChartParams
    seed : int or numpy.random.Generator
        Drives the permutation draws; equal seeds give equal decisions.
    """

    def __init__(self, baseline, params: ChartParams = ChartParams(), seed=0):
        baseline = np.atleast_2d(np.asarray(baseline, dtype=float))
        if baseline.shape[1] < params.p:
            raise ValueError(f"baseline has {baseline.shape[1]} coordinates, need p={params.p}")
        if len(baseline) < params.p:
            raise ValueError(f"baseline has {len(baseline)} rows, need at least p={params.p}")
        self.params = params
        self.state = ChartState(baseline[:, : params.p].copy())
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def step(self, spectrum) -> StepResult:
        x = np.asarray(spectrum, dtype=float).ravel()
        prm = self.params
        if len(x) < prm.p:
            raise ValueError(f"spectrum has {len(x)} values, need p={prm.p}")
        st = self.state
        st.stream.append(x[: prm.p])
        n, m0 = st.n, len(st.baseline)
        pooled = np.vstack([st.baseline, np.array(st.stream)])
        varying = np.ptp(pooled, axis=0) > 0
        if not varying.all():
            warnings.warn(
                f"{int((~varying).sum())} coordinate(s) have all values tied and contribute 0",
                RuntimeWarning, stacklevel=2,
            )
        G = midranks(pooled[:, varying])
        N = m0 + n
        L = tail_length(n, prm)
        # the observed order runs through the same kernel, so the observed
        # value and its copy inside an exact reference agree bit for bit
        identity = np.arange(N - 1, N - 1 - L, -1)[None]
        no_bound = [math.inf] * L
        stat = float(permutation_reference(G, n, m0, prm, no_bound, identity)[0]) if G.shape[1] else 0.0
        # small reference sets are enumerated, which makes the p-value exact
        exact = math.perm(N, L) <= EXACT_LIMIT
        if exact:
            tails = exact_tails(N, L)
        else:
            tails = random_tails(N, self.rng.random((prm.permutations, L)))
        if G.shape[1]:
            ref = permutation_reference(G, n, m0, prm, st.thresholds[::-1], tails, st.signals[::-1])
        else:
            ref = np.zeros(len(tails))
        pv = p_value(stat, ref, exact)
        h = signal_threshold(ref, prm.alpha, exact)
        sig = pv < prm.alpha
        st.thresholds.append(h)
        st.signals.append(bool(sig))
        st.last_statistic = stat
        st.signal = sig
        return StepResult(n, stat, pv, bool(sig), h)


def chart_step(chart: DFEWMAChart, spectrum) -> StepResult:
    return chart.step(spectrum)


# --- run-length simulation --------------------------------------------------


class Scenario(Protocol):
    name: str

    def phase1(self, rng: np.random.Generator, m0: int) -> np.ndarray: ...

    def phase2(self, rng: np.random.Generator) -> Iterator[np.ndarray]: ...


@dataclass(frozen=True)
class RunLengthResult:
    scenario: str
    arl: float
    sdrl: float
    reps: int
    censored: int
    run_lengths: np.ndarray


def run_length(scenario: Scenario, params: ChartParams, seed: int, rep: int,
               cap: int = DEFAULT_CAP) -> tuple[int, bool]:
    """One replication: Phase-I baseline, then stream until signal or ``cap``."""
    rng = np.random.default_rng([seed, rep])
    chart = DFEWMAChart(scenario.phase1(rng, params.m0), params, seed=rng)
    n = 0
    for n, x in enumerate(scenario.phase2(rng), start=1):
        if chart.step(x).signal:
            return n, False
        if n >= cap:
            break
    return n, True


def _worker(args):
    scenario, params, seed, rep, cap = args
    return run_length(scenario, params, seed, rep, cap)


def worker_count() -> int:
    env = os.environ.get("LBSPEC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"LBSPEC_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def run_length_simulation(
    scenario: Scenario,
    params: ChartParams,
    reps: int,
    seed: int = 0,
    cap: int = DEFAULT_CAP,
    workers: Optional[int] = None,
) -> RunLengthResult:
    """Monte Carlo ARL and SDRL.

    Replication ``r`` uses the generator ``default_rng([seed, r])`` for its
    parts and permutations, so the result does not depend on ``workers``.
    Censored replications enter the mean at ``cap``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    workers = worker_count() if workers is None else max(1, workers)
    jobs = [(scenario, params, seed, r, cap) for r in range(reps)]
    if workers == 1 or reps == 1:
        out = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_worker, jobs, chunksize=max(1, reps // (4 * workers))))
    rl = np.array([r for r, _ in out], dtype=float)
    censored = sum(c for _, c in out)
    if censored:
        warnings.warn(f"{censored} replication(s) reached the {cap}-step cap", RuntimeWarning, stacklevel=2)
    sdrl = float(rl.std(ddof=1)) if reps > 1 else 0.0
    return RunLengthResult(scenario.name, float(rl.mean()), sdrl, reps, censored, rl)


# --- CSV --------------------------------------------------------------------


def read_baseline_csv(path) -> np.ndarray:
    """Rows of comma-separated eigenvalues; a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: baseline is empty")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: rows have differing lengths {sorted(widths)}")
    try:
        return np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def write_baseline_csv(spectra, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.atleast_2d(spectra):
            w.writerow([f"{v:.17g}" for v in row])


def write_report_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "ARL", "SDRL", "reps", "censored"])
        for r in results:
            w.writerow([r.scenario, f"{r.arl:.6g}", f"{r.sdrl:.6g}", r.reps, r.censored])
