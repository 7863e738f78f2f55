"""Countermeasures against stealthy attacks and the benchmark detectors.

Three detectors run next to the CUSUM core and an attack is declared at the
earliest of the stopping times:

* generalized Shewhart test: fire the first time the single-step GLLR
  reaches phi -- catches short bursts that never accumulate;
* sliding-window chi-squared test: the normalized innovation energy
  c_t = r^T Q^{-1} r is chi-squared with K*lam degrees of freedom under
  clean operation, so a Pearson goodness-of-fit statistic over the last L
  values flags any distributional drift, parametric or not;
* benchmarks from the evaluation: a nonparametric CUSUM on the innovation
  norm, plus Euclidean-distance and cosine-similarity outlier detectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import chi2

from .grid_model import GridModel, MeasurementBatch
from .kalman import InnovationSolveError, KalmanState


@dataclass(frozen=True)
class ShewhartConfig:
    phi: float

    def __post_init__(self):
        if not self.phi > 0:
            raise ValueError("phi must be > 0")


def shewhart_step(beta: float, cfg: ShewhartConfig) -> bool:
    """Stateless repeated GLLR test; the threshold is inclusive."""
    return beta >= cfg.phi


@dataclass(frozen=True)
class Chi2Config:
    """Interval partition of [0, inf) with cell probabilities, window, threshold."""

    edges: tuple  # M-1 interior edges, ascending
    p: tuple  # M probabilities, sum 1
    L: int
    varphi: float

    def __post_init__(self):
        if len(self.p) != len(self.edges) + 1:
            raise ValueError("need exactly M-1 interior edges for M cells")
        if abs(sum(self.p) - 1.0) > 1e-9:
            raise ValueError("cell probabilities must sum to 1")
        if list(self.edges) != sorted(self.edges):
            raise ValueError("edges must be ascending")
        if self.L < len(self.p):
            raise ValueError("window must be at least as long as the cell count")
        if not self.varphi > 0:
            raise ValueError("varphi must be > 0")

    @property
    def M(self) -> int:
        return len(self.p)

    @property
    def intervals(self) -> tuple:
        """Half-open cells [lo, hi) covering [0, inf)."""
        bounds = (0.0,) + self.edges + (math.inf,)
        return tuple(zip(bounds[:-1], bounds[1:]))

    @classmethod
    def equiprobable(cls, dof: int, M: int, L: int, varphi: float) -> "Chi2Config":
        """Cells of equal probability under the chi-squared(dof) null."""
        edges = tuple(float(chi2.ppf(j / M, dof)) for j in range(1, M))
        return cls(edges=edges, p=(1.0 / M,) * M, L=L, varphi=varphi)

    def cell_of(self, c: float) -> int:
        """Half-open membership: cell j covers [edge_{j-1}, edge_j)."""
        return int(np.searchsorted(self.edges, c, side="right"))


@dataclass
class Chi2State:
    """Ring buffer of cell indices with incrementally maintained counts."""

    cfg: Chi2Config
    cells: np.ndarray  # (L,) ints
    counts: np.ndarray  # (M,)
    head: int = 0
    chi_stat: float = 0.0

    @classmethod
    def from_samples(cls, cfg: Chi2Config, samples: Sequence[float]) -> "Chi2State":
        samples = np.asarray(samples, dtype=float)
        if samples.shape != (cfg.L,):
            raise ValueError(f"window needs exactly {cfg.L} samples")
        cells = np.array([cfg.cell_of(c) for c in samples])
        counts = np.bincount(cells, minlength=cfg.M).astype(float)
        st = cls(cfg=cfg, cells=cells, counts=counts)
        st.chi_stat = _pearson(counts, cfg)
        return st

    @classmethod
    def initialize(cls, cfg: Chi2Config, dof: int, rng: np.random.Generator) -> "Chi2State":
        """Seed the window with draws from the chi-squared(dof) null."""
        return cls.from_samples(cfg, chi2.rvs(dof, size=cfg.L, random_state=rng))


def _pearson(counts: np.ndarray, cfg: Chi2Config) -> float:
    expected = cfg.L * np.asarray(cfg.p)
    return float(((counts - expected) ** 2 / expected).sum())


def chi2_sample(model: GridModel, pre_filter: KalmanState, y: MeasurementBatch) -> float:
    """Normalized innovation energy c_t = r^T Q^{-1} r against the pre-filter
    prediction; chi-squared with K*lam degrees of freedom under no attack."""
    r = y.flat - model.H @ pre_filter.x_pred
    Q = model.H @ pre_filter.P_pred @ model.H.T
    Q.flat[:: Q.shape[0] + 1] += model.sigma_w2
    try:
        factor = cho_factor(0.5 * (Q + Q.T), lower=True, check_finite=False)
    except LinAlgError as exc:
        raise InnovationSolveError(f"chi-squared Q solve failed: {exc}") from exc
    return float(r @ cho_solve(factor, r, check_finite=False))


def chi2_sample_from_innovation(r: np.ndarray, factor) -> float:
    """Same statistic when the innovation and its factorization are at hand."""
    return float(r @ cho_solve(factor, r, check_finite=False))


def pearson_step(st: Chi2State, c_new: float, cfg: Chi2Config) -> "tuple[Chi2State, float, bool]":
    """Evict the oldest sample, insert c_new, update counts in O(1)."""
    cell = cfg.cell_of(c_new)
    old = st.cells[st.head]
    st.counts[old] -= 1.0
    st.counts[cell] += 1.0
    st.cells[st.head] = cell
    st.head = (st.head + 1) % cfg.L
    st.chi_stat = _pearson(st.counts, cfg)
    return st, st.chi_stat, st.chi_stat >= cfg.varphi


@dataclass
class BenchmarkConfig:
    np_q: float = math.inf
    euclid_d: float = math.inf
    cosine_d: float = -math.inf
    np_clamp: bool = False  # the printed recursion has no max{0, .}


@dataclass
class BenchmarkState:
    mu0: float
    S: float = 0.0
    last_distance: float = 0.0
    last_cosine: float = 1.0


def np_cusum_step(
    st: BenchmarkState,
    y: MeasurementBatch,
    x_pre_pred: np.ndarray,
    model: GridModel,
    q: float,
    clamp: bool = False,
) -> "tuple[BenchmarkState, bool]":
    """Nonparametric CUSUM on the innovation norm centered by its clean mean.

    As printed the recursion carries no clamp at zero; the original method it
    adapts does clamp, so the toggle is exposed.
    """
    dist = float(np.linalg.norm(y.flat - model.H @ x_pre_pred))
    s_new = st.S + dist - st.mu0
    if clamp:
        s_new = max(0.0, s_new)
    st.S = s_new
    st.last_distance = dist
    return st, s_new >= q


def euclidean_step(y: np.ndarray, y_pred: np.ndarray, threshold: float) -> bool:
    return float(np.linalg.norm(np.asarray(y) - np.asarray(y_pred))) >= threshold


def cosine_similarity(y: np.ndarray, y_pred: np.ndarray) -> float:
    """Cosine of the angle; a zero vector counts as maximal dissimilarity."""
    y = np.asarray(y, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    ny, np_ = np.linalg.norm(y), np.linalg.norm(y_pred)
    if ny == 0.0 or np_ == 0.0:
        return -1.0
    return float(y @ y_pred / (ny * np_))


def cosine_step(y: np.ndarray, y_pred: np.ndarray, threshold: float) -> bool:
    return cosine_similarity(y, y_pred) <= threshold


@dataclass
class Verdict:
    """Per-step record of every statistic and which detectors have fired."""

    t: int
    beta: float
    g: float
    c: float
    chi: float
    np_S: float = math.nan
    euclid: float = math.nan
    cosine: float = math.nan
    fired: frozenset = frozenset()
    stopped: bool = False


def algorithm2_step(
    alg1_fired: bool,
    beta: float,
    shewhart_cfg: Optional[ShewhartConfig],
    chi2_fired: bool,
    t: int,
) -> "tuple[bool, frozenset]":
    """Combine the three stopping rules; several may fire simultaneously."""
    fired = set()
    if alg1_fired:
        fired.add("alg1")
    if shewhart_cfg is not None and shewhart_step(beta, shewhart_cfg):
        fired.add("shewhart")
    if chi2_fired:
        fired.add("chi2")
    return bool(fired), frozenset(fired)
