"""Choosing the number of chain-of-thought tokens.

The cost of ``k`` reasoning tokens in front of a target after an ``n``-token
context is::

    F(k) = k H + B0 - alpha log2(1 + k / k0) + beta k log2(n + k) / (n + k)

(reasoning entropy, benefit law, positional penalty).  The planner
estimates the inputs, computes the closed-form minimiser, checks it against
an exhaustive integer scan and steers clear of lengths that are positive
multiples of the rotary period.

Code lengths are in bits.  Concentration terms such as ``log(2/delta)`` use
natural logarithms.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError

DEFAULT_SAMPLE_BUDGET = 100_000

# Worked example from the literature this planner is checked against:
# inputs and the value reported for them.
REFERENCE_EXAMPLE = {
    "inputs": {"n": 100, "epsilon": 0.1, "h_cot": 3.0, "alpha": 5.0, "gap": 6.0},
    "k_star": 12.8,
    "pm": 1.3,
}


@dataclass(frozen=True)
class CotParams:
    n: int
    epsilon: float
    h_cot: float
    alpha: float
    b0: float
    b_opt: float = 0.0
    k0: float = 10.0
    beta: float = 0.0
    delta: float = 0.05
    v_max: int = 50_000
    rho: float = 0.9
    m_b: float = 1.0
    lipschitz: float | None = None
    pe_variance: float | None = None
    rope_period: int = 64

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("n must be >= 1")
        if not 0 < self.epsilon <= 1:
            raise DomainError("epsilon must lie in (0, 1]")
        if not 0 < self.delta < 1:
            raise DomainError("delta must lie in (0, 1)")
        if self.h_cot < 0:
            raise DomainError("reasoning entropy must be >= 0")
        if self.b0 < self.b_opt:
            raise DomainError("B0 must be >= B_opt")
        if not self.alpha > 0:
            raise DomainError("alpha must be > 0")
        if not self.k0 >= 1:
            raise DomainError("k0 must be >= 1")
        if not 0 < self.rho < 1:
            raise DomainError("rho must lie in (0, 1)")
        if self.v_max < 2:
            raise DomainError("V_max must be >= 2")
        if self.beta < 0:
            raise DomainError("beta must be >= 0")
        if self.rope_period < 1:
            raise DomainError("rope period must be >= 1")

    @classmethod
    def from_architecture(cls, lipschitz: float, pe_variance: float, **kwargs) -> "CotParams":
        return cls(beta=0.5 * lipschitz**2 * pe_variance, lipschitz=lipschitz,
                   pe_variance=pe_variance, **kwargs)

    @property
    def gap(self) -> float:
        return self.b0 - self.b_opt

    @property
    def epsilon_min(self) -> float:
        return max(self.n ** -0.25, 1.0 / self.v_max)

    def admissibility(self) -> dict:
        eps_ok = self.epsilon_min <= self.epsilon <= 0.5
        if self.h_cot > 0:
            n0 = 4 * self.beta * math.log2(max(self.n, 2)) / self.h_cot
        else:
            n0 = math.inf if self.beta > 0 else 0.0
        return {
            "epsilon_in_range": eps_ok,
            "epsilon_min": self.epsilon_min,
            "n_large_enough": self.n >= n0,
            "n0": n0,
            "admissible": eps_ok and self.n >= n0,
        }


def c1_constant(rho: float) -> float:
    """C1 = 2 sqrt(2) / (1 - rho)."""
    if not 0 <= rho < 1:
        raise DomainError("rho must lie in [0, 1)")
    return 2.0 * math.sqrt(2.0) / (1.0 - rho)


# --------------------------------------------------------------------------
# Reasoning entropy
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EntropyEstimate:
    h_cot: float
    half_width: float
    samples: int


def entropy_half_width(samples: int, delta: float, v_max: int, rho: float) -> float:
    return c1_constant(rho) * math.log2(v_max) * math.sqrt(math.log(2.0 / delta)) / math.sqrt(samples)


def estimate_entropy(logprobs: Sequence[float], delta: float, v_max: int = 2,
                     rho: float = 0.5) -> EntropyEstimate:
    """Mean code length of a reasoning-token stream and its concentration radius.

    ``logprobs`` are per-token log2-probabilities of the sampled tokens.
    """
    lp = np.asarray(logprobs, dtype=float)
    if lp.size < 2:
        raise DomainError("need at least 2 log-probabilities")
    if np.any(lp > 0):
        raise DomainError("log-probabilities must be <= 0")
    h = float(-lp.mean()) + 0.0
    return EntropyEstimate(h, entropy_half_width(lp.size, delta, v_max, rho), int(lp.size))


@dataclass(frozen=True)
class SampleRequirement:
    samples: int
    feasible: bool
    budget: int
    half_width_at_budget: float


def required_samples(delta: float, v_max: int, rho: float,
                     budget: int = DEFAULT_SAMPLE_BUDGET) -> SampleRequirement:
    """ceil(16 C1^2 log2(V_max)^2 ln(6 / delta)) reasoning tokens."""
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1)")
    if v_max < 2:
        raise DomainError("V_max must be >= 2")
    c1 = c1_constant(rho)
    m = math.ceil(16 * c1**2 * math.log2(v_max) ** 2 * math.log(6.0 / delta))
    return SampleRequirement(m, m <= budget, int(budget),
                             entropy_half_width(int(budget), delta, v_max, rho))


# --------------------------------------------------------------------------
# Benefit law
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BenefitFit:
    alpha: float
    k0: float
    b_opt: float
    b0: float
    se: dict = field(default_factory=dict)
    residual_norm: float = 0.0
    points: int = 0
    degenerate: bool = False
    b_opt_identified: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def benefit_model(k, fit, floor: bool = True):
    """B0 - alpha log2(1 + k / k0), optionally floored at B_opt.

    ``fit`` may be a :class:`BenefitFit` or :class:`CotParams`.
    """
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise DomainError("k must be >= 0")
    value = fit.b0 - fit.alpha * np.log2(1.0 + k / fit.k0)
    if floor:
        value = np.maximum(value, fit.b_opt)
    return float(value) if value.ndim == 0 else value


def benefit_grid(n: int, points: int) -> np.ndarray:
    """k = 0 plus ``points - 1`` log-spaced values in [1, 10 sqrt(n)]."""
    if points < 2:
        raise DomainError("need at least 2 points")
    return np.concatenate([[0.0], np.geomspace(1.0, 10.0 * math.sqrt(n), points - 1)])


def n_benefit_points(n: int, log_base: str = "e") -> int:
    """ceil(20 log n); natural log by default, base 2 on request."""
    lg = math.log(n) if log_base == "e" else math.log2(n)
    return math.ceil(20 * lg)


def _profile(u: np.ndarray, b: np.ndarray, lam: float):
    """Best (B0, alpha, B_opt) for fixed k0, over all floor split points.

    ``u`` must be sorted ascending.  Points from index ``s`` on sit on the
    floor; the rest follow the logarithmic law.  All splits are solved at
    once from prefix sums of the 2x2 normal equations.
    """
    m = u.size
    s = np.arange(2, m + 1)
    c1 = np.cumsum(np.ones(m))[s - 1] + lam
    cu = np.cumsum(u)[s - 1]
    cuu = np.cumsum(u * u)[s - 1] + lam
    cb = np.cumsum(b)[s - 1]
    cub = np.cumsum(u * b)[s - 1]
    # normal equations for (B0, alpha) with design [1, -u]
    det = c1 * cuu - cu * cu
    b0 = (cuu * cb - cu * cub) / det
    alpha = (cu * cb - c1 * cub) / det
    tail = b.sum() - np.cumsum(b)[s - 1]
    floor = tail / (m - s + lam)
    full = s == m
    floor[full] = np.minimum(b0[full] - alpha[full] * u[-1], b.min())
    pred = np.maximum(b0[:, None] - alpha[:, None] * u[None, :], floor[:, None])
    sse = np.sum((b[None, :] - pred) ** 2, axis=1) + lam * (b0**2 + alpha**2 + floor**2)
    i = int(np.argmin(sse))
    return float(sse[i]), float(b0[i]), float(alpha[i]), float(floor[i]), bool(not full[i])


def fit_benefit(points: Sequence[tuple[float, float]], n: int | None = None,
                lam: float = 1e-10) -> BenefitFit:
    """Regularised least-squares fit of the floored logarithmic benefit law.

    The scale k0 is found by bounded Brent search in log k0 started around
    1, sqrt(n) and n; the other three parameters are profiled out exactly.
    """
    pts = sorted((float(k), float(v)) for k, v in points)
    k = np.array([p[0] for p in pts])
    b = np.array([p[1] for p in pts])
    if k.size < 4:
        raise DomainError("need at least 4 benefit points")
    if k[0] != 0.0:
        raise DomainError("benefit points must include k = 0")
    if np.any(np.diff(k) <= 0):
        raise DomainError("benefit k values must be distinct")
    if n is None:
        n = max(int(round((k[-1] / 10.0) ** 2)), 1)

    if np.ptp(b) <= 1e-12 * max(1.0, float(np.abs(b).max())):
        return BenefitFit(0.0, 1.0, float(b.mean()), float(b.mean()), points=int(k.size),
                          degenerate=True, b_opt_identified=False)

    def objective(logk0):
        return _profile(np.log2(1.0 + k / math.exp(logk0)), b, lam)[0]

    best = None
    for start in sorted({1.0, math.sqrt(n), float(n)}):
        c = math.log(start)
        res = minimize_scalar(objective, bounds=(c - 4.0, c + 4.0), method="bounded",
                              options={"xatol": 1e-12, "maxiter": 500})
        if best is None or res.fun < best.fun:
            best = res
    k0 = math.exp(best.x)
    u = np.log2(1.0 + k / k0)
    _, b0, alpha, b_opt, identified = _profile(u, b, lam)
    pred = np.maximum(b0 - alpha * u, b_opt)
    resid = b - pred
    on_curve = (b0 - alpha * u) >= b_opt
    J = np.zeros((k.size, 4))
    J[on_curve, 0] = 1.0
    J[on_curve, 1] = -u[on_curve]
    J[on_curve, 2] = alpha * k[on_curve] / (k0**2 * (1 + k[on_curve] / k0) * math.log(2))
    J[~on_curve, 3] = 1.0
    dof = max(k.size - 4, 1)
    cov = float(resid @ resid) / dof * np.linalg.pinv(J.T @ J)
    se = dict(zip(("b0", "alpha", "k0", "b_opt"), (float(math.sqrt(max(v, 0.0))) for v in np.diag(cov))))
    degenerate = alpha <= 1e-8 * max(1.0, abs(b0))
    return BenefitFit(alpha=alpha, k0=k0, b_opt=min(b_opt, b0), b0=b0, se=se,
                      residual_norm=float(np.linalg.norm(resid)), points=int(k.size),
                      degenerate=degenerate, b_opt_identified=identified)


# --------------------------------------------------------------------------
# Cost functional
# --------------------------------------------------------------------------


def positional_penalty(k, n: int, beta: float):
    """beta k log2(n + k) / (n + k)."""
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or n < 1:
        raise DomainError("need k >= 0 and n >= 1")
    out = beta * k * np.log2(n + k) / (n + k)
    return float(out) if out.ndim == 0 else out


def _benefit_source(params: CotParams, fit: BenefitFit | None):
    return fit if fit is not None else params


def _check_integral(k):
    arr = np.asarray(k, dtype=float)
    if np.any(arr != np.round(arr)):
        raise DomainError("F is defined on integer k only")
    return arr


def total_cost(k, params: CotParams, fit: BenefitFit | None = None, floor_benefit: bool = False):
    """F(k) for integer k (scalar or array).

    The benefit term is unfloored by default; ``floor_benefit=True`` stops it
    at B_opt.
    """
    arr = _check_integral(k)
    src = _benefit_source(params, fit)
    out = (arr * params.h_cot + benefit_model(arr, src, floor=floor_benefit)
           + positional_penalty(arr, params.n, params.beta))
    return float(out) if np.ndim(out) == 0 else out


def cost_envelope(k: int, params: CotParams, fit: BenefitFit | None = None) -> dict:
    """Bounds on the remainder terms left out of :func:`total_cost`."""
    src = _benefit_source(params, fit)
    reasoning = c1_constant(params.rho) * math.log2(params.v_max) * math.sqrt(k * math.log(2 / params.delta))
    benefit = 2 * params.m_b / (k + src.k0) ** 2
    positional = params.beta / (params.n + k)
    return {"reasoning": reasoning, "benefit": benefit, "positional": positional,
            "total": reasoning + benefit + positional}


# --------------------------------------------------------------------------
# Optimisation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosedForm:
    k_closed: float
    k_closed_natural_log: float
    xi_bound: float
    c2: float
    admissibility: dict
    reference_mismatch: dict | None = None


def closed_form_kstar(params: CotParams) -> ClosedForm:
    """sqrt(alpha n / (H (B0 - B_opt))) log2(1/eps) with its finite-n radius."""
    if params.h_cot <= 0 or params.gap <= 0:
        raise DomainError("closed form needs H_CoT > 0 and B0 > B_opt")
    c = math.sqrt(params.alpha * params.n / (params.h_cot * params.gap))
    k2 = c * math.log2(1.0 / params.epsilon)
    ke = c * math.log(1.0 / params.epsilon)
    c2 = 4.0 * (1.0 + params.m_b / params.alpha + params.beta / params.h_cot)
    xi = c2 * math.sqrt(math.log2(params.n) / params.n) if params.n > 1 else math.inf
    ref = REFERENCE_EXAMPLE["inputs"]
    mismatch = None
    close = lambda a, b: math.isclose(a, b, rel_tol=1e-6)
    if (params.n == ref["n"] and close(params.epsilon, ref["epsilon"]) and close(params.h_cot, ref["h_cot"])
            and close(params.alpha, ref["alpha"]) and close(params.gap, ref["gap"])):
        mismatch = {"reported": REFERENCE_EXAMPLE["k_star"], "reported_pm": REFERENCE_EXAMPLE["pm"],
                    "base2": k2, "natural_log": ke,
                    "flag": abs(k2 - REFERENCE_EXAMPLE["k_star"]) > REFERENCE_EXAMPLE["pm"]}
    return ClosedForm(k2, ke, xi, c2, params.admissibility(), mismatch)


@dataclass(frozen=True)
class GridResult:
    k: int
    cost: float
    k_max: int
    at_boundary: bool


def grid_optimize(params: CotParams, k_max: int, fit: BenefitFit | None = None,
                  floor_benefit: bool = False, avoid_period: int | None = None) -> GridResult:
    """Exhaustive integer minimisation of F on [0, k_max]; ties go to smaller k.

    With ``avoid_period`` set, positive multiples of it are excluded.
    """
    if k_max < 1:
        raise DomainError("k_max must be >= 1")
    ks = np.arange(0, int(k_max) + 1)
    costs = np.asarray(total_cost(ks, params, fit, floor_benefit), dtype=float)
    if avoid_period:
        costs = np.where((ks > 0) & (ks % avoid_period == 0), np.inf, costs)
    i = int(np.argmin(costs))
    assert np.all(costs[i] <= costs)
    return GridResult(int(ks[i]), float(costs[i]), int(k_max), i == ks.size - 1)


def rope_adjust(k: int, period: int = 64) -> int:
    """Step off positive multiples of the rotary period."""
    if k < 0 or period < 1:
        raise DomainError("need k >= 0 and period >= 1")
    return k + 1 if k > 0 and k % period == 0 else k


@dataclass
class CotPlan:
    k_closed: float
    k_rounded: int
    k_grid: int
    k_grid_admissible: int
    k_final: int
    costs: dict
    xi_bound: float
    c2: float
    stability: dict
    entropy: dict
    benefit: dict
    samples: dict
    admissibility: dict
    params: dict
    k_max: int
    cost_projection: float
    warnings: list = field(default_factory=list)
    reference_mismatch: dict | None = None
    floor_benefit: bool = False
    resolved: CotParams | None = field(default=None, repr=False)
    fit: BenefitFit | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("resolved")
        out.pop("fit")
        return out

    def cost_table(self):
        """(k, F, benefit, penalty) on the scanned grid [0, k_max]."""
        ks = np.arange(0, self.k_max + 1)
        eff = self.resolved
        src = _benefit_source(eff, self.fit)
        return (ks, total_cost(ks, eff, self.fit, self.floor_benefit),
                benefit_model(ks, src, floor=self.floor_benefit),
                positional_penalty(ks, eff.n, eff.beta))

    def summary(self) -> str:
        return (f"k_final={self.k_final} k_closed={self.k_closed:.2f} k_grid={self.k_grid} "
                f"F={self.costs['final']:.4f} bits cost_projection={self.cost_projection:.3f} "
                f"admissible={self.admissibility['admissible']}")


def plan(params: CotParams, benefit_points: Sequence[tuple[float, float]] | None = None,
         entropy_stream: Sequence[float] | None = None, fit: BenefitFit | None = None,
         sample_budget: int = DEFAULT_SAMPLE_BUDGET, j_log_base: str = "e",
         floor_benefit: bool = False) -> CotPlan:
    """Estimate inputs, compute the closed form, grid-refine and adjust.

    Entropy comes from ``entropy_stream`` when given, else ``params.h_cot``.
    Benefit parameters come from fitting ``benefit_points``, else from
    ``fit``, else from ``params``.
    """
    warnings: list[str] = []
    need = required_samples(params.delta, params.v_max, params.rho, sample_budget)
    if not need.feasible:
        warnings.append(f"required entropy samples {need.samples} exceed budget {sample_budget}")
    if entropy_stream is not None:
        est = estimate_entropy(entropy_stream, params.delta, params.v_max, params.rho)
        if est.samples < need.samples:
            warnings.append(f"entropy estimated from {est.samples} < {need.samples} tokens; "
                            "half-width widened accordingly")
        h_cot, half_width, m_used = est.h_cot, est.half_width, est.samples
    else:
        h_cot, half_width, m_used = params.h_cot, None, None

    j_need = n_benefit_points(params.n, j_log_base)
    if benefit_points is not None:
        fit = fit_benefit(benefit_points, params.n)
        if len(benefit_points) < j_need:
            warnings.append(f"{len(benefit_points)} benefit points < recommended {j_need}")
    if fit is not None:
        if fit.degenerate:
            warnings.append("benefit fit is degenerate (alpha ~ 0)")
        if not fit.b_opt_identified:
            warnings.append("benefit floor not reached by the data; B_opt is a lower envelope")
        if fit.alpha <= 0 or fit.k0 <= 0:
            fit = replace(fit, alpha=max(fit.alpha, 1e-12), k0=max(fit.k0, 1e-12))
        eff = replace(params, h_cot=h_cot, alpha=fit.alpha, b0=fit.b0, b_opt=fit.b_opt)
        j_used = fit.points
    else:
        eff = replace(params, h_cot=h_cot)
        j_used = None

    closed = closed_form_kstar(eff)
    k_round = int(round(closed.k_closed))
    k_max = int(math.ceil(max(2 * closed.k_closed, 10 * math.sqrt(eff.n), 1)))
    grid = grid_optimize(eff, k_max, fit, floor_benefit=floor_benefit)
    if grid.at_boundary:
        warnings.append("grid minimum sits on k_max")
    p = eff.rope_period
    admissible = grid_optimize(eff, k_max, fit, floor_benefit=floor_benefit, avoid_period=p)
    candidate = rope_adjust(k_round, p)
    f = lambda k: total_cost(k, eff, fit, floor_benefit=floor_benefit)
    k_final = admissible.k if f(admissible.k) <= f(candidate) else candidate
    if k_round > 0 and k_round % p == 0:
        warnings.append(f"rounded closed form {k_round} is a multiple of the period {p}")

    m_for_bound = m_used if m_used is not None else need.samples
    c3 = math.log2(eff.v_max) * max(eff.h_cot, eff.alpha, eff.beta)
    stability = {
        "M": m_for_bound, "J": j_used if j_used is not None else j_need, "delta": eff.delta,
        "C3": c3, "C3_note": "up to an unspecified absolute constant",
        "bound": c3 * math.sqrt(math.log(eff.n / eff.delta) / eff.n)
                 * (m_for_bound ** -0.5 + (j_used or j_need) ** -0.5),
    }
    return CotPlan(
        k_closed=closed.k_closed, k_rounded=k_round, k_grid=grid.k,
        k_grid_admissible=admissible.k, k_final=int(k_final),
        costs={"closed": f(k_round), "grid": grid.cost, "final": f(k_final), "zero": f(0)},
        xi_bound=closed.xi_bound, c2=closed.c2, stability=stability,
        entropy={"h_cot": h_cot, "half_width": half_width, "samples": m_used},
        benefit={"alpha": eff.alpha, "k0": fit.k0 if fit is not None else eff.k0, "b0": eff.b0,
                 "b_opt": eff.b_opt, "fit": fit.to_dict() if fit is not None else None},
        samples={"required": need.samples, "budget": need.budget, "feasible": need.feasible,
                 "half_width_at_budget": need.half_width_at_budget, "J_required": j_need,
                 "J_used": j_used},
        admissibility=closed.admissibility, params=asdict(eff), k_max=k_max,
        cost_projection=(eff.n + k_final) / eff.n, warnings=warnings,
        reference_mismatch=closed.reference_mismatch, floor_benefit=floor_benefit,
        resolved=eff, fit=fit,
    )
