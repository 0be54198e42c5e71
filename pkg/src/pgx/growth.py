"""The seven tumor-growth curves, constrained fitting, and cohort fit reports.

Closed forms and their defining ODEs (V = volume in cc, t = age in years):

  Linear       V = v0 + a t                                dV/dt = a
  Exponential  V = v0 e^(a t)                              dV/dt = a V
  Mendelsohn   V = (v0^(1-b) + (1-b) a t)^(1/(1-b))        dV/dt = a V^b
  Gompertz     V = k (v0/k)^exp(-a t)                      dV/dt = a V ln(k/V)
  Logistic     V = k / (1 + ((k-v0)/v0) e^(-a t))          dV/dt = a V (1 - V/k)
  Spratt       V = k / (1 + ((k/v0)^b - 1) e^(-a t))^(1/b) dV/dt = (a/b) V (1 - (V/k)^b)
  Bertalanffy  V = (k^(1/3) - (k^(1/3) - v0^(1/3)) e^(-a t))^3
                                                           dV/dt = 3a (V^(2/3) k^(1/3) - V)

Spratt is the generalized logistic; at b = 1 it coincides with Logistic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eda import OptimizerConfig, optimize

MODEL_KINDS = ("linear", "exponential", "mendelsohn", "gompertz", "logistic",
               "spratt", "bertalanffy")
S_SHAPED = ("gompertz", "logistic", "spratt", "bertalanffy")
EVER_GROWING = ("linear", "exponential", "mendelsohn")

# parameter order per kind; search box folds the v0 constraint into its bound
_PARAM_NAMES = {
    "linear": ("v0", "alpha"),
    "exponential": ("v0", "alpha"),
    "mendelsohn": ("v0", "alpha", "b"),
    "gompertz": ("v0", "alpha", "k"),
    "logistic": ("v0", "alpha", "k"),
    "spratt": ("v0", "alpha", "k", "b"),
    "bertalanffy": ("v0", "alpha", "k"),
}

_BOX = {
    "v0": (1e-6, 0.01),
    "alpha": (0.0, 10.0),
    "k": (0.01, 1500.0),
    "b_mendelsohn": (0.01, 0.99),
    "b_spratt": (0.01, 10.0),
}


@dataclass(frozen=True)
class GrowthParams:
    v0: float
    alpha: float
    k: float = None
    b: float = None

    def as_dict(self) -> dict:
        return {n: getattr(self, n) for n in ("v0", "alpha", "k", "b") if getattr(self, n) is not None}


@dataclass(frozen=True)
class FitConstraints:
    v0_max: float = 0.01
    v_at_100_max: float = 1500.0
    plausibility_threshold: float = 1000.0

    def __post_init__(self):
        if not 0 < self.v0_max < self.v_at_100_max:
            raise ValueError("need 0 < v0_max < v_at_100_max")


@dataclass(frozen=True)
class GrowthFit:
    kind: str
    params: GrowthParams
    rmse: float
    constraint_violation: float
    v_at_100: float
    evaluations_used: int
    seed: int

    @property
    def feasible(self) -> bool:
        return self.constraint_violation == 0.0

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": self.params.as_dict(),
            "rmse": self.rmse,
            "v_at_100": self.v_at_100,
            "violation": self.constraint_violation,
            "evaluations": self.evaluations_used,
            "seed": self.seed,
        }


def param_names(kind: str) -> tuple:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown growth model {kind!r}")
    return _PARAM_NAMES[kind]


def param_bounds(kind: str) -> tuple:
    """Search box as (lower, upper) arrays in param_names order."""
    lower, upper = [], []
    for name in param_names(kind):
        key = f"b_{kind}" if name == "b" else name
        lo, hi = _BOX[key]
        lower.append(lo)
        upper.append(hi)
    return np.array(lower), np.array(upper)


def params_from_vector(kind: str, x) -> GrowthParams:
    return GrowthParams(**dict(zip(param_names(kind), (float(v) for v in x))))


def eval_model(kind: str, params: GrowthParams, t) -> np.ndarray:
    """Evaluate a growth curve at ages t (years); vectorized in t."""
    t = np.asarray(t, dtype=float)
    v0, a = params.v0, params.alpha
    if v0 <= 0 or a < 0:
        raise ValueError("need v0 > 0 and alpha >= 0")
    if kind == "linear":
        return v0 + a * t
    if kind == "exponential":
        return v0 * np.exp(a * t)
    if kind == "mendelsohn":
        b = params.b
        if b is None or not 0 < b < 1:
            raise ValueError("Mendelsohn needs b in (0, 1)")
        return (v0 ** (1 - b) + (1 - b) * a * t) ** (1 / (1 - b))
    k = params.k
    if kind in S_SHAPED and (k is None or k <= 0):
        raise ValueError(f"{kind} needs carrying capacity k > 0")
    if kind == "gompertz":
        return k * (v0 / k) ** np.exp(-a * t)
    if kind == "logistic":
        return k / (1 + ((k - v0) / v0) * np.exp(-a * t))
    if kind == "spratt":
        b = params.b
        if b is None or b <= 0:
            raise ValueError("Spratt needs b > 0")
        # (k/v0)^b can overflow float64 for extreme k/v0; compute in log space
        log_ratio = b * (np.log(k) - np.log(v0))
        with np.errstate(over="ignore"):
            q = np.exp(np.minimum(log_ratio, 700.0))
        return k / (1 + (q - 1) * np.exp(-a * t)) ** (1 / b)
    if kind == "bertalanffy":
        c = k ** (1 / 3)
        return (c - (c - v0 ** (1 / 3)) * np.exp(-a * t)) ** 3
    raise ValueError(f"unknown growth model {kind!r}")


def constraint_violation(kind: str, params: GrowthParams,
                         constraints: FitConstraints = FitConstraints()) -> float:
    """Total constraint excess in cc; 0 means feasible."""
    v0 = float(eval_model(kind, params, 0.0))
    v100 = float(eval_model(kind, params, 100.0))
    return max(0.0, v0 - constraints.v0_max) + max(0.0, v100 - constraints.v_at_100_max)


def rmse(kind: str, params: GrowthParams, samples) -> float:
    """Root mean square error between the curve and (age, volume) samples."""
    if not samples:
        raise ValueError("need at least one sample")
    ages = np.array([a for a, _ in samples], dtype=float)
    vols = np.array([v for _, v in samples], dtype=float)
    resid = eval_model(kind, params, ages) - vols
    return float(np.sqrt(np.mean(resid**2)))


def _search_transform(kind):
    """Internal search coordinates for the optimizer.

    v0 and k span several decades, so they are searched in log space. The
    useful growth rates sit near the bottom of the alpha box, so alpha is
    searched through a cubic map that concentrates samples at small rates
    while still covering the full [0, 10] range (alpha = 0 included). The
    shape exponent b stays linear. Returns (lower, upper, decode).
    """
    names = param_names(kind)
    lower, upper = param_bounds(kind)
    lo, hi, fwd = [], [], []
    for i, name in enumerate(names):
        if name in ("v0", "k"):
            lo.append(np.log(lower[i]))
            hi.append(np.log(upper[i]))
            fwd.append(np.exp)
        elif name == "alpha":
            lo.append(0.0)
            hi.append(1.0)
            fwd.append(lambda u, s=upper[i]: s * u**3)
        else:
            lo.append(lower[i])
            hi.append(upper[i])
            fwd.append(lambda u: u)

    def decode(x):
        return params_from_vector(kind, [f(u) for f, u in zip(fwd, x)])

    return np.array(lo), np.array(hi), decode


def fit_model(samples, kind: str, constraints: FitConstraints = FitConstraints(),
              config: OptimizerConfig = None) -> GrowthFit:
    """Constrained RMSE fit of one growth curve to one tumor's time series."""
    if len(samples) < 3:
        raise ValueError(f"need at least 3 samples, got {len(samples)}")
    if config is None:
        config = OptimizerConfig()
    ages = np.array([a for a, _ in samples], dtype=float)
    vols = np.array([v for _, v in samples], dtype=float)
    lower, upper, decode = _search_transform(kind)

    def objective(x):
        resid = eval_model(kind, decode(x), ages) - vols
        return float(np.sqrt(np.mean(resid**2)))

    def violation(x):
        return constraint_violation(kind, decode(x), constraints)

    result = optimize(objective, violation, (lower, upper), config)
    params = decode(result.x)
    return GrowthFit(
        kind=kind,
        params=params,
        rmse=result.objective,
        constraint_violation=result.violation,
        v_at_100=float(eval_model(kind, params, 100.0)),
        evaluations_used=result.evaluations,
        seed=config.seed,
    )


def aggregate_report(fits, constraints: FitConstraints = FitConstraints(),
                     rmse_outlier_cc: float = 5.0) -> list:
    """Per-model summary rows for box plots and outlier counts.

    fits: iterable of GrowthFit across tumors. Returns a list of dicts with
    RMSE quartiles, the count of tumors with RMSE above the outlier
    threshold, the count of implausible fits (v_at_100 above the
    plausibility threshold), and the count pinned at the hard cap.
    """
    by_kind = {}
    for f in fits:
        by_kind.setdefault(f.kind, []).append(f)
    rows = []
    for kind in MODEL_KINDS:
        group = by_kind.get(kind)
        if not group:
            continue
        r = np.array([f.rmse for f in group])
        v100 = np.array([f.v_at_100 for f in group])
        rows.append({
            "model": kind,
            "n": len(group),
            "rmse_min": float(r.min()),
            "rmse_q1": float(np.percentile(r, 25)),
            "rmse_median": float(np.percentile(r, 50)),
            "rmse_q3": float(np.percentile(r, 75)),
            "rmse_max": float(r.max()),
            "rmse_outliers": int(np.sum(r > rmse_outlier_cc)),
            "implausible_v100": int(np.sum(v100 > constraints.plausibility_threshold)),
            "pinned_at_cap": int(np.sum(v100 >= constraints.v_at_100_max * (1 - 1e-3))),
        })
    return rows
