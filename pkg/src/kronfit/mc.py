"""Seeded Monte Carlo studies of the estimators and tests.

Replication ``r`` of a study with seed ``s`` draws from its own Philox
stream keyed by ``SeedSequence([s, r])``, so results do not depend on how
replications are spread across worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .design import FactorDims, build_design, factors_to_theta, theta_to_correlation
from .errors import DataError, KronfitError
from .matfun import SpdMatrix, spd_power
from .mdest import WeightSpec, md_estimate
from .moments import MomentSet, Panel, Regime, compute_moments, gaussian_v
from .qmle import LikelihoodContext, one_step
from .infer import normal_sf, overid_test

__all__ = [
    "DgpSpec",
    "McSummary",
    "StudyOptions",
    "kronecker_theta",
    "replication_rng",
    "run_study",
    "simulate_panel",
    "vhat_error_study",
]

MIN_T_DF = 8.0
Z975 = 1.959963984540054


@dataclass(frozen=True, eq=False)
class DgpSpec:
    """Data-generating process ``y_t = mu + Sigma^{1/2} eps_t``.

    ``Sigma = D^{1/2} Theta D^{1/2}`` with ``Theta = exp(Omega(theta0))``.
    ``innovation`` is ``"gaussian"`` or ``("t", df)`` with ``df > 8``; Student
    draws are scaled to unit variance. ``corr_shift`` adds a fixed amount to
    the (1, 2) and (2, 1) entries of ``Theta``, which breaks the Kronecker
    structure.
    """

    dims: FactorDims
    theta0: np.ndarray
    d0: np.ndarray
    T: int
    seed: int = 0
    innovation: object = "gaussian"
    mu: np.ndarray | None = None
    corr_shift: float = 0.0

    def __post_init__(self):
        dims = self.dims if isinstance(self.dims, FactorDims) else FactorDims(tuple(self.dims))
        object.__setattr__(self, "dims", dims)
        design = build_design(dims)
        theta0 = np.asarray(self.theta0, dtype=float).reshape(-1)
        if theta0.size != design.s:
            raise DataError(f"theta0 must have {design.s} entries, got {theta0.size}")
        object.__setattr__(self, "theta0", theta0)
        d0 = np.broadcast_to(np.asarray(self.d0, dtype=float), (dims.n,)).copy()
        if not np.all(d0 > 0):
            raise DataError("d0 must be strictly positive")
        object.__setattr__(self, "d0", d0)
        if int(self.T) < 2:
            raise DataError("T must be at least 2")
        object.__setattr__(self, "T", int(self.T))
        inn = self.innovation
        if isinstance(inn, str):
            if inn != "gaussian":
                raise DataError(f"unknown innovation {inn!r}")
        else:
            kind, df = inn
            if kind != "t":
                raise DataError(f"unknown innovation {inn!r}")
            if not float(df) > MIN_T_DF:
                raise DataError(f"Student-t innovations need df > {MIN_T_DF:g}, got {df}")
            object.__setattr__(self, "innovation", ("t", float(df)))
        # Sigma must be SPD; this raises otherwise
        self.sigma_root  # noqa: B018

    @property
    def design(self):
        return build_design(self.dims)

    @property
    def theta_matrix(self) -> np.ndarray:
        m = theta_to_correlation(self.design, self.theta0)[0].array.copy()
        if self.corr_shift:
            m[0, 1] += self.corr_shift
            m[1, 0] += self.corr_shift
        return m

    @property
    def sigma(self) -> SpdMatrix:
        r = np.sqrt(self.d0)
        return SpdMatrix(self.theta_matrix * np.outer(r, r))

    @property
    def sigma_root(self) -> np.ndarray:
        return spd_power(self.sigma, 0.5).array

    def with_(self, **changes) -> "DgpSpec":
        return replace(self, **changes)


def kronecker_theta(dims, correlations) -> np.ndarray:
    """``theta`` of a Kronecker product of equicorrelation factors.

    ``correlations[j]`` is the common off-diagonal value of factor ``j``.
    """
    fd = dims if isinstance(dims, FactorDims) else FactorDims(tuple(dims))
    factors = []
    for nj, rho in zip(fd.dims, correlations):
        f = np.full((nj, nj), float(rho))
        np.fill_diagonal(f, 1.0)
        factors.append(f)
    return factors_to_theta(build_design(fd), factors)


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep)])))


def simulate_panel(spec: DgpSpec, rep: int = 0) -> Panel:
    """One panel of ``spec.T`` observations from replication stream ``rep``."""
    rng = replication_rng(spec.seed, rep)
    n = spec.dims.n
    if spec.innovation == "gaussian":
        eps = rng.standard_normal((spec.T, n))
    else:
        df = spec.innovation[1]
        eps = rng.standard_t(df, size=(spec.T, n)) * math.sqrt((df - 2.0) / df)
    y = eps @ spec.sigma_root
    if spec.mu is not None:
        y = y + np.asarray(spec.mu, dtype=float)
    return Panel(y)


@dataclass(frozen=True)
class StudyOptions:
    """What each replication computes.

    ``md_regime`` drives the studentized minimum-distance statistic,
    ``onestep_regime`` the one-step estimator (its start is the identity-weight
    estimate in the same regime) and ``overid_regime`` the over-identification
    test. The known-``D`` regimes use ``d0`` from the DGP.
    """

    tasks: tuple[str, ...] = ("md", "onestep", "overid")
    contrast: tuple[float, ...] | None = None
    md_regime: Regime = Regime.ESTIMATED_D
    onestep_regime: Regime = Regime.KNOWN_D
    overid_regime: Regime = Regime.KNOWN_D
    v_kind: str = "empirical"
    alpha: float = 0.05


def _replicate(args) -> dict | str:
    spec, rep, opts = args
    try:
        return _replicate_inner(spec, rep, opts)
    except KronfitError as exc:
        return type(exc).__name__


def _replicate_inner(spec: DgpSpec, rep: int, opts: StudyOptions) -> dict:
    design = spec.design
    c = np.asarray(opts.contrast if opts.contrast is not None else _first(design.s))
    target = float(c @ spec.theta0)
    mom = compute_moments(simulate_panel(spec, rep)).with_known_d(spec.d0)
    out: dict = {}
    if "md" in opts.tasks:
        md = md_estimate(mom, design, WeightSpec.identity(), opts.md_regime, opts.v_kind)
        se = md.contrast_se(c)
        t = (float(c @ md.theta) - target) / se
        out.update(md_theta=md.theta, md_t=t, md_cover=float(abs(t) <= Z975))
    if "onestep" in opts.tasks:
        start = md_estimate(mom, design, WeightSpec.identity(), opts.onestep_regime, opts.v_kind)
        ctx = LikelihoodContext.from_moments(mom, design, opts.onestep_regime)
        os_ = one_step(start, ctx)
        t = (float(c @ os_.theta) - target) / os_.contrast_se(c)
        out.update(os_start=start.theta, os_theta=os_.theta, os_t=t,
                   os_cover=float(abs(t) <= Z975))
    if "overid" in opts.tasks:
        res = overid_test(None, mom, design, opts.overid_regime, opts.v_kind)
        out.update(overid_stat=res.statistic, overid_p=res.p_chi2,
                   overid_reject=float(res.p_chi2 < opts.alpha), overid_df=res.df)
    return out


def _first(s: int) -> np.ndarray:
    c = np.zeros(s)
    c[0] = 1.0
    return c


def ks_distance(sample) -> float:
    """Kolmogorov-Smirnov distance between ``sample`` and the standard normal."""
    x = np.sort(np.asarray(sample, dtype=float))
    m = x.size
    if m == 0:
        return math.nan
    cdf = np.array([1.0 - normal_sf(v) for v in x])
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - cdf), np.max(cdf - (i - 1) / m)))


@dataclass(frozen=True, eq=False)
class McSummary:
    """Per-replication draws plus aggregate diagnostics for one DGP cell."""

    spec: DgpSpec
    reps: int
    draws: dict = field(repr=False)
    failures: dict = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        return sum(self.failures.values())

    @property
    def n_ok(self) -> int:
        return self.reps - self.n_failed

    @property
    def valid(self) -> bool:
        """False when more than 1% of replications failed."""
        return self.n_failed <= 0.01 * self.reps

    def _get(self, key):
        return self.draws.get(key)

    def mean(self, key) -> float:
        return float(np.mean(self.draws[key]))

    def var(self, key) -> float:
        return float(np.var(self.draws[key], ddof=1))

    def coverage(self, prefix: str = "md") -> float:
        return self.mean(f"{prefix}_cover")

    def rejection_rate(self) -> float:
        return self.mean("overid_reject")

    def bias(self, key: str = "md_theta") -> np.ndarray:
        return np.mean(self.draws[key], axis=0) - self.spec.theta0

    def rmse(self, key: str = "md_theta") -> np.ndarray:
        err = self.draws[key] - self.spec.theta0
        return np.sqrt(np.mean(err * err, axis=0))

    def ks(self, key: str = "md_t") -> float:
        return ks_distance(self.draws[key])

    def to_dict(self) -> dict:
        """Aggregates as plain Python floats (suitable for JSON)."""
        out: dict = {
            "reps": self.reps,
            "failed": self.n_failed,
            "failures": dict(sorted(self.failures.items())),
            "valid": self.valid,
        }
        for prefix in ("md", "os"):
            if f"{prefix}_t" in self.draws:
                out[prefix] = {
                    "t_mean": self.mean(f"{prefix}_t"),
                    "t_var": self.var(f"{prefix}_t"),
                    "coverage": self.coverage(prefix),
                    "ks_distance": self.ks(f"{prefix}_t"),
                    "bias": [float(x) for x in self.bias(f"{prefix}_theta")],
                    "rmse": [float(x) for x in self.rmse(f"{prefix}_theta")],
                }
        if "overid_stat" in self.draws:
            out["overid"] = {
                "df": int(self.draws["overid_df"][0]),
                "rejection_rate": self.rejection_rate(),
                "mean_statistic": self.mean("overid_stat"),
            }
        return out


def run_study(spec: DgpSpec, reps: int, options: StudyOptions | None = None,
              workers: int = 1, chunksize: int = 16) -> McSummary:
    """Run ``reps`` replications of ``spec`` and collect their draws.

    Failed replications are counted by error type and excluded from the
    draws. Output is identical for any ``workers`` value.
    """
    options = options or StudyOptions()
    if reps < 1:
        raise DataError("reps must be positive")
    jobs = [(spec, r, options) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=chunksize))
    else:
        results = [_replicate(j) for j in jobs]
    failures: dict = {}
    rows = []
    for res in results:
        if isinstance(res, str):
            failures[res] = failures.get(res, 0) + 1
        else:
            rows.append(res)
    draws = {}
    if rows:
        for key in rows[0]:
            draws[key] = np.array([row[key] for row in rows])
    return McSummary(spec, reps, draws, failures)


def vhat_error_study(spec: DgpSpec, T_values, reps: int) -> dict[int, np.ndarray]:
    """Max-norm errors ``|V_hat - V|_inf`` per sample size, Gaussian ``V`` as the truth.

    Replication streams are shared across sample sizes (same seed, same
    replication index) but each panel is drawn afresh at its own ``T``.
    """
    if spec.innovation != "gaussian":
        raise DataError("the V error study uses the Gaussian V as the truth")
    v_true = gaussian_v(spec.sigma)
    out = {}
    for T in T_values:
        s = spec.with_(T=int(T))
        errs = np.empty(reps)
        for r in range(reps):
            mom = compute_moments(simulate_panel(s, r))
            errs[r] = np.max(np.abs(mom.v - v_true))
        out[int(T)] = errs
    return out


def population_moments(spec: DgpSpec) -> MomentSet:
    """Moments equal to the DGP's population values (Gaussian ``V``)."""
    return MomentSet.population(spec.sigma, T=spec.T, d_known=spec.d0)
