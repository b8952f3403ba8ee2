"""End-to-end runs of the two channel-addition scenarios.

A run fills one cell per (member, time) with the ideal chi matrix and, in
simulated mode, ``R`` reconstructed chi matrices obtained from seeded Poisson
count tables.  The analysis helpers turn a record into the lambda_min, gbar and
trace-distance series and the scalar measures.

Every random draw comes from a generator seeded with
``SeedSequence(base_seed, spawn_key=(scenario, member, time index, replica))``,
so results do not depend on evaluation order or on the number of workers.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import channels as ch
from . import markovianity as mk
from . import tomography as tomo
from .channels import ChannelModel, Member, Scenario
from .linalg import LinalgError, SingularMatrixError, eigvalsh, inverse, project_psd_trace

TIME_BOUNDS = {Scenario.CASE_A: 3.6, Scenario.CASE_B: 5 * np.pi / 4 + 0.1}
TIME_MATCH_TOL = 1e-12
# settings that only affect where and how fast a run happens
EXECUTION_FIELDS = ("output_dir", "workers")
DEFAULT_S_VALUES = {Scenario.CASE_A: (0.5, 1.0, 1.5), Scenario.CASE_B: (np.pi / 4 + 0.1,)}
STATES = {
    "H": ch.ket_to_dm(ch.KET_H),
    "V": ch.ket_to_dm(ch.KET_V),
    "D": ch.ket_to_dm(np.array([1, 1]) / np.sqrt(2)),
    "A": ch.ket_to_dm(np.array([1, -1]) / np.sqrt(2)),
    "R": ch.ket_to_dm(np.array([1, 1j]) / np.sqrt(2)),
    "L": ch.ket_to_dm(np.array([1, -1j]) / np.sqrt(2)),
}


class Mode(str, enum.Enum):
    IDEAL = "ideal"
    SIMULATED = "simulated"


class Resampling(str, enum.Enum):
    BOOTSTRAP = "bootstrap"
    PER_SHOT = "per_shot"


class GbarMode(str, enum.Enum):
    PAIRWISE = "pairwise"
    AVERAGED = "averaged"


class MissingCellError(KeyError):
    def __init__(self, member, t):
        self.member = Member(member)
        self.t = float(t)
        super().__init__(f"record has no cell for {self.member.value} at t={self.t!r}")

    def __str__(self) -> str:
        return self.args[0]


class GridError(ValueError):
    pass


# --- time grids ------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeGrid:
    """Base times, their ``+epsilon`` partners and the sorted union of both.

    ``flagged`` lists ``(member, s)`` for grid times where the ideal ``F(s)``
    of that member is singular or ill-conditioned.  Intermediate maps starting
    there are excluded for every record on the grid, since a reconstructed
    ``F(s)`` near a singular point is invertible only through noise.
    """

    scenario: Scenario
    base_times: tuple
    epsilon: float
    pairs: tuple = ()
    times: tuple = ()
    flagged: tuple = ()

    def index_of(self, t: float) -> int:
        for i, u in enumerate(self.times):
            if abs(u - t) <= TIME_MATCH_TOL:
                return i
        raise KeyError(t)

    def is_flagged(self, member, s: float) -> bool:
        member = Member(member)
        return any(m is member and abs(u - s) <= TIME_MATCH_TOL for m, u in self.flagged)


def _merge_times(values) -> tuple:
    out: list[float] = []
    for v in sorted(values):
        if not out or v - out[-1] > TIME_MATCH_TOL:
            out.append(float(v))
    return tuple(out)


def _singular_starts(scenario: Scenario, base_times, cond_limit: float) -> tuple:
    flagged = []
    for member in Member:
        model = ChannelModel(scenario, member)
        for s in base_times:
            try:
                _, cond = inverse(ch.ideal_transfer(model, s))
            except SingularMatrixError:
                cond = math.inf
            if cond > cond_limit:
                flagged.append((member, float(s)))
    return tuple(flagged)


def make_grid(
    scenario, base_times: Sequence[float], epsilon: float = mk.DEFAULT_EPSILON, cond_limit: float = mk.DEFAULT_COND_LIMIT
) -> TimeGrid:
    scenario = Scenario(scenario)
    base = tuple(float(b) for b in base_times)
    if not base:
        raise GridError("grid needs at least one base time")
    if epsilon <= 0:
        raise GridError("epsilon must be positive")
    if base[0] < 0 or np.any(np.diff(base) <= 0):
        raise GridError("base times must be nonnegative and strictly increasing")
    pairs = tuple((b, b + epsilon) for b in base)
    if pairs[-1][1] > TIME_BOUNDS[scenario] + TIME_MATCH_TOL:
        raise GridError(f"last pair ends at {pairs[-1][1]!r}, beyond {TIME_BOUNDS[scenario]!r} for {scenario.value}")
    times = _merge_times([u for p in pairs for u in p])
    return TimeGrid(scenario, base, float(epsilon), pairs, times, _singular_starts(scenario, times, cond_limit))


def default_base_times(scenario) -> tuple:
    scenario = Scenario(scenario)
    if scenario is Scenario.CASE_A:
        return tuple(0.5 * k for k in range(8))
    return tuple(sorted([k * np.pi / 8 for k in range(11)] + [np.pi / 4 + 0.1]))


def default_grid(scenario, epsilon: float = mk.DEFAULT_EPSILON, cond_limit: float = mk.DEFAULT_COND_LIMIT) -> TimeGrid:
    """CaseA: ``0, 0.5, ..., 3.5``.  CaseB: ``k pi/8`` for ``k = 0..10`` plus ``pi/4 + 0.1``.

    Each base time is paired with ``t + epsilon``.
    """
    return make_grid(scenario, default_base_times(scenario), epsilon, cond_limit)


# --- configuration and record ----------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario = Scenario.CASE_A
    mode: Mode = Mode.SIMULATED
    shots: int = tomo.DEFAULT_SHOTS
    replicas: int = 100
    base_seed: int = 0
    epsilon: float = mk.DEFAULT_EPSILON
    resampling: Resampling = Resampling.BOOTSTRAP
    zero_threshold: Optional[float] = None
    cond_limit: float = mk.DEFAULT_COND_LIMIT
    output_dir: str = "out"
    base_times: Optional[tuple] = None
    s_values: Optional[tuple] = None
    members: tuple = ("ch1", "ch2", "total")
    state_pair: tuple = ("H", "V")
    workers: int = 1
    optimizer: str = "lbfgs"

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "resampling", Resampling(self.resampling))
        object.__setattr__(self, "members", tuple(Member(m) for m in self.members))
        if self.base_times is not None:
            object.__setattr__(self, "base_times", tuple(float(b) for b in self.base_times))
        if self.s_values is not None:
            object.__setattr__(self, "s_values", tuple(float(s) for s in self.s_values))
        object.__setattr__(self, "state_pair", tuple(self.state_pair))
        if int(self.replicas) < 1:
            raise ValueError("replicas must be >= 1")
        if int(self.shots) < 1:
            raise ValueError("shots must be >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.members:
            raise ValueError("at least one member is needed")
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")
        if self.optimizer not in ("lbfgs", "simplex"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if len(self.state_pair) != 2 or any(s not in STATES for s in self.state_pair):
            raise ValueError(f"state_pair must name two of {sorted(STATES)}")
        if self.base_seed < 0:
            raise ValueError("base_seed must be nonnegative")

    @property
    def effective_replicas(self) -> int:
        return 1 if self.mode is Mode.IDEAL else int(self.replicas)

    def grid(self) -> TimeGrid:
        base = self.base_times if self.base_times is not None else default_base_times(self.scenario)
        return make_grid(self.scenario, base, self.epsilon, self.cond_limit)

    def resolved_s_values(self) -> tuple:
        """Configured ``s`` values, or the defaults that lie on the grid."""
        if self.s_values is not None:
            return self.s_values
        times = self.grid().times
        return tuple(s for s in DEFAULT_S_VALUES[self.scenario] if any(abs(s - u) <= TIME_MATCH_TOL for u in times))

    def to_dict(self, execution: bool = True) -> dict:
        """Plain-JSON view; ``execution=False`` drops fields that cannot change results."""
        d = asdict(self)
        if not execution:
            for key in EXECUTION_FIELDS:
                d.pop(key)
        d["scenario"] = self.scenario.value
        d["mode"] = self.mode.value
        d["resampling"] = self.resampling.value
        d["members"] = [m.value for m in self.members]
        d["state_pair"] = list(self.state_pair)
        for key in ("base_times", "s_values"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d


@dataclass
class Cell:
    member: Member
    time_index: int
    t: float
    ideal_chi: np.ndarray
    chis: np.ndarray
    fidelities: np.ndarray
    failed: np.ndarray
    converged: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def replicas(self) -> int:
        return self.chis.shape[0]

    def valid_chis(self) -> np.ndarray:
        return self.chis[~self.failed]


@dataclass
class ExperimentRecord:
    config: RunConfig
    grid: TimeGrid
    cells: dict
    metadata: dict = field(default_factory=dict)

    def cell(self, member, t: float) -> Cell:
        member = Member(member)
        try:
            idx = self.grid.index_of(t)
        except KeyError:
            raise MissingCellError(member, t) from None
        try:
            return self.cells[(member, idx)]
        except KeyError:
            raise MissingCellError(member, t) from None

    @property
    def members(self) -> tuple:
        return tuple(m for m in Member if any(k[0] is m for k in self.cells))


# --- running ---------------------------------------------------------------------------


_SCENARIO_INDEX = {Scenario.CASE_A: 0, Scenario.CASE_B: 1}
_MEMBER_INDEX = {Member.CH1: 0, Member.CH2: 1, Member.TOTAL: 2}


def replica_seed(base_seed: int, scenario, member, time_index: int, replica: int) -> np.random.SeedSequence:
    key = (_SCENARIO_INDEX[Scenario(scenario)], _MEMBER_INDEX[Member(member)], int(time_index), int(replica))
    return np.random.SeedSequence(int(base_seed), spawn_key=key)


def _path_mixings(scenario: Scenario, member: Member, t: float):
    """Mixings and weights of the physical paths that realise a member."""
    if member is not Member.TOTAL:
        return [ch.pauli_mixing_of(ChannelModel(scenario, member), t)], [1.0]
    weights = [0.5, 0.5] if scenario is Scenario.CASE_A else list(ch.CASE_B_WEIGHTS)
    mixes = [ch.pauli_mixing_of(ChannelModel(scenario, m), t) for m in (Member.CH1, Member.CH2)]
    return mixes, weights


def _replica_tables(config: RunConfig, member: Member, ti: int, t: float, probs: np.ndarray, r: int):
    rng = np.random.default_rng(replica_seed(config.base_seed, config.scenario, member, ti, r))
    if config.resampling is Resampling.BOOTSTRAP:
        return [tomo.simulate_counts(probs[k], config.shots, rng) for k in range(4)]
    mixes, weights = _path_mixings(config.scenario, member, t)
    return [tomo.simulate_counts_per_shot(tomo.PROBES[k], mixes, weights, config.shots, rng) for k in range(4)]


def run_cell(config: RunConfig, member, ti: int, t: float) -> Cell:
    """Ideal chi plus ``R`` reconstructions for one (member, time) cell.

    A replica whose reconstruction fails is stored as NaN with its ``failed``
    entry set; the run carries on.
    """
    member = Member(member)
    ideal = ch.ideal_chi(ChannelModel(config.scenario, member), t)
    R = config.effective_replicas
    if config.mode is Mode.IDEAL:
        return Cell(member, ti, t, ideal, ideal[None].copy(), np.ones(1), np.zeros(1, bool), np.ones(1, bool))
    probs = tomo.probe_output_probabilities(ideal)
    chis = np.full((R, 4, 4), np.nan, dtype=complex)
    fid = np.full(R, np.nan)
    failed = np.zeros(R, dtype=bool)
    converged = np.zeros(R, dtype=bool)
    flags = []
    for r in range(R):
        tables = _replica_tables(config, member, ti, t, probs, r)
        try:
            res = tomo.reconstruct_channel(tables, method=config.optimizer)
            chis[r] = res.estimate
            converged[r] = res.converged
            fid[r] = tomo.process_fidelity(res.estimate, ideal)
        except (LinalgError, tomo.EmptyPairError, ValueError) as exc:
            failed[r] = True
            chis[r] = np.nan
            fid[r] = np.nan
            flags.append(f"replica {r}: {type(exc).__name__}: {exc}")
    if not np.all(converged | failed):
        flags.append(f"{int(np.sum(~converged & ~failed))} replica fits stopped before convergence")
    return Cell(member, ti, t, ideal, chis, fid, failed, converged, flags)


def _run_unit(args):
    config, member, ti, t = args
    return run_cell(config, member, ti, t)


def run(config: RunConfig) -> ExperimentRecord:
    """Fill every (member, time) cell of the configured grid."""
    grid = config.grid()
    units = [(config, m, ti, t) for m in config.members for ti, t in enumerate(grid.times)]
    if config.workers > 1 and config.mode is Mode.SIMULATED:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            done = list(pool.map(_run_unit, units, chunksize=1))
    else:
        done = [_run_unit(u) for u in units]
    cells = {(c.member, c.time_index): c for c in done}
    metadata = {"tool": "chanadd", "tool_version": __version__, "config": config.to_dict(execution=False)}
    return ExperimentRecord(config, grid, cells, metadata)


# --- summaries -------------------------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    """Distribution summary of a set of pair values (NaN when no value is left)."""

    mean: float
    median: float
    std: float
    sem: float
    p05: float
    p95: float
    n: int
    n_flagged: int


def _pair_sem(values: np.ndarray) -> float:
    """Standard error of the mean of an ``R_s x R_t`` table of pair values.

    Pairs that share a replica are correlated, so the error comes from the
    spread of row and column means rather than from ``std / sqrt(R_s R_t)``.
    """
    rows = np.nanmean(values, axis=1)
    cols = np.nanmean(values, axis=0)
    rows = rows[np.isfinite(rows)]
    cols = cols[np.isfinite(cols)]
    var = 0.0
    if rows.size > 1:
        var += np.var(rows, ddof=1) / rows.size
    if cols.size > 1:
        var += np.var(cols, ddof=1) / cols.size
    return float(np.sqrt(var))


def summarize(values: np.ndarray, n_flagged: int = 0) -> Summary:
    table = np.atleast_2d(np.asarray(values, dtype=float))
    flat = table[np.isfinite(table)]
    if flat.size == 0:
        nan = math.nan
        return Summary(nan, nan, nan, nan, nan, nan, 0, int(n_flagged))
    std = float(np.std(flat, ddof=1)) if flat.size > 1 else 0.0
    return Summary(
        float(np.mean(flat)),
        float(np.median(flat)),
        std,
        _pair_sem(table),
        float(np.percentile(flat, 5)),
        float(np.percentile(flat, 95)),
        int(flat.size),
        int(n_flagged),
    )


def _inverses(F_s: np.ndarray, cond_limit: float):
    """Per-replica inverses of ``F(s)``; ``None`` where singular or ill-conditioned."""
    out = []
    for F in F_s:
        try:
            inv, cond = inverse(F)
        except SingularMatrixError:
            out.append(None)
            continue
        out.append(inv if cond <= cond_limit else None)
    return out


def _pair_table(chis_s: np.ndarray, chis_t: np.ndarray, cond_limit: float, fn):
    """``fn`` of every product ``F_t[j] F_s[i]^-1``; rows that cannot be formed stay NaN."""
    F_s = ch.transfer_of_chi(chis_s)
    F_t = ch.transfer_of_chi(chis_t)
    table = np.full((len(F_s), len(F_t)), np.nan)
    flagged = 0
    for i, inv in enumerate(_inverses(F_s, cond_limit)):
        if inv is None:
            flagged += len(F_t)
            continue
        try:
            table[i] = fn(F_t @ inv)
        except LinalgError:
            flagged += len(F_t)
    return table, flagged


def lambda_min_table(record: ExperimentRecord, member, s: float, t: float):
    """``(R_s, R_t)`` table of minimum Choi eigenvalues plus the flagged-pair count."""
    if t < s:
        raise ValueError(f"need t >= s, got s={s}, t={t}")
    cs = record.cell(member, s)
    ct = record.cell(member, t)
    if record.grid.is_flagged(member, s):
        return np.full((cs.replicas, ct.replicas), np.nan), cs.replicas * ct.replicas
    table, flagged = _pair_table(cs.valid_chis(), ct.valid_chis(), record.config.cond_limit, mk.min_choi_eigenvalue)
    flagged += int(cs.failed.sum()) * ct.replicas + int(ct.failed.sum()) * int((~cs.failed).sum())
    return table, flagged


def lambda_min_statistics(record: ExperimentRecord, member, s: float, t: float) -> Summary:
    """Minimum Choi eigenvalue over all ``R x R`` replica pairs ``(chi_s, chi_t)``."""
    table, flagged = lambda_min_table(record, member, s, t)
    return summarize(table, flagged)


def _g_of(F_ts: np.ndarray, epsilon: float) -> np.ndarray:
    return mk.gbar(mk._g_from_norm(mk.intermediate_trace_norm(F_ts), epsilon, clamp=True))


def mean_chi(chis: np.ndarray) -> np.ndarray:
    """Elementwise mean, projected to PSD trace 1 only when it is not already."""
    m = np.mean(chis, axis=0)
    m = 0.5 * (m + m.conj().T)
    if eigvalsh(m, hermiticity_tol=np.inf)[0] >= 0 and abs(np.trace(m).real - 1.0) <= 1e-12:
        return m
    return project_psd_trace(m, 1.0)


def gbar_series(record: ExperimentRecord, member, mode=GbarMode.PAIRWISE) -> list:
    """``gbar(t)`` at every base time of the grid.

    ``pairwise`` evaluates every replica pair ``(chi_t, chi_t+eps)`` and
    reports the mean with its spread; ``averaged`` uses the mean chi at both
    times.  A point with no usable pair is returned with ``flagged`` set.
    """
    mode = GbarMode(mode)
    eps = record.grid.epsilon
    out = []
    for t, te in record.grid.pairs:
        c0 = record.cell(member, t)
        c1 = record.cell(member, te)
        if mode is GbarMode.PAIRWISE:
            a, b = c0.valid_chis(), c1.valid_chis()
        else:
            a = b = np.empty((0, 4, 4), dtype=complex)
            if len(c0.valid_chis()) and len(c1.valid_chis()):
                a, b = mean_chi(c0.valid_chis())[None], mean_chi(c1.valid_chis())[None]
        if len(a) == 0 or len(b) == 0 or record.grid.is_flagged(member, t):
            n_pairs = c0.replicas * c1.replicas if mode is GbarMode.PAIRWISE else 1
            out.append(mk.GbarPoint(t, math.nan, eps, math.nan, math.nan, 0, True, n_pairs))
            continue
        table, flagged = _pair_table(a, b, record.config.cond_limit, lambda F: _g_of(F, eps))
        s = summarize(table, flagged)
        if s.n == 0:
            out.append(mk.GbarPoint(t, math.nan, eps, math.nan, math.nan, 0, True, flagged))
        else:
            out.append(mk.GbarPoint(t, s.mean, eps, s.std, s.sem, s.n, False, flagged))
    return out


def blp_series(record: ExperimentRecord, member, state_pair: Optional[Sequence[str]] = None) -> list:
    """Trace distance of the two states after each time's channel.

    ``D`` comes from the mean chi; ``std`` is the spread of the per-replica
    distances.
    """
    pair = tuple(state_pair or record.config.state_pair)
    rho1, rho2 = STATES[pair[0]], STATES[pair[1]]
    out = []
    for t in record.grid.times:
        cell = record.cell(member, t)
        chis = cell.valid_chis()
        if len(chis) == 0:
            out.append(mk.TraceDistancePoint(t, math.nan, ",".join(pair), math.nan))
            continue
        m = mean_chi(chis)
        D = float(mk.blp_trace_distance(ch.apply_chi(m, rho1), ch.apply_chi(m, rho2)))
        per = mk.blp_trace_distance(ch.apply_chi(chis, rho1), ch.apply_chi(chis, rho2))
        std = float(np.std(per, ddof=1)) if len(per) > 1 else 0.0
        out.append(mk.TraceDistancePoint(t, D, ",".join(pair), std))
    return out


@dataclass(frozen=True)
class Measures:
    member: Member
    rhp_pairwise: float
    rhp_averaged: float
    blp: float
    n_flagged_points: int


def _threshold(record: ExperimentRecord) -> Optional[float]:
    return record.config.zero_threshold


def measures(record: ExperimentRecord, member) -> Measures:
    """``D_RHP`` in both gbar modes and ``D_BLP``; flagged points are skipped and counted."""
    member = Member(member)
    pw = gbar_series(record, member, GbarMode.PAIRWISE)
    av = gbar_series(record, member, GbarMode.AVERAGED)
    flagged = sum(p.flagged for p in pw)
    thr = _threshold(record)
    D = [p for p in blp_series(record, member) if np.isfinite(p.D)]
    return Measures(
        member,
        mk.rhp_measure(pw, thr),
        mk.rhp_measure(av, thr),
        mk.blp_measure(D) if len(D) >= 2 else 0.0,
        int(flagged),
    )


def flagged_report(record: ExperimentRecord) -> list:
    """``(member, t, kind, detail)`` rows for every flagged start time, point and replica."""
    rows = []
    for member, s in record.grid.flagged:
        if member in record.members:
            rows.append((member.value, s, "singular_start", "F(s) singular or above the condition limit"))
    for member in record.members:
        for p in gbar_series(record, member, GbarMode.PAIRWISE):
            if p.n_flagged:
                kind = "excluded_point" if p.flagged else "excluded_pairs"
                rows.append((member.value, p.t, kind, f"{p.n_flagged} replica pairs"))
        for key in sorted(k for k in record.cells if k[0] is member):
            cell = record.cells[key]
            for msg in cell.flags:
                rows.append((member.value, cell.t, "replica", msg))
    return rows


def with_overrides(config: RunConfig, **kwargs) -> RunConfig:
    return replace(config, **{k: v for k, v in kwargs.items() if v is not None})
