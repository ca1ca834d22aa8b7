"""Finite-statistics fidelity certificates.

Closed-form bounds for the test-then-teleport protocol: Chernoff-Hoeffding
concentration when the source is iid, Azuma-Hoeffding martingale
concentration when it is not, the average-to-individual fidelity step for
the withheld pair, copy-count formulas, and an inverse planner that finds
protocol parameters meeting a fidelity/confidence target with as few
copies as possible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

TRUSTS = ("1sdi", "di")
INEQUALITIES = ("steering", "chsh")

#: Published self-testing slopes used by default for the state bound.
DEFAULT_ALPHA = {
    ("1sdi", "steering"): 1.26,
    ("1sdi", "chsh"): 0.90,
    ("di", "chsh"): 1.19,
}

#: Published slopes for the measurement bound (steering / CHSH trust cases).
MEASUREMENT_ALPHA = {"1sdi": 3.10, "di": 3.70}

#: Trace-distance coefficients quoted alongside the fidelity slopes; the
#: conversion is coefficient = sqrt(2 * alpha).
TRACE_DISTANCE_COEFFICIENTS = {
    ("1sdi", "steering", "state"): 1.59,
    ("1sdi", "steering", "measurement"): 2.49,
    ("1sdi", "chsh", "state"): 1.34,
    ("1sdi", "chsh", "measurement"): 2.10,
    ("di", "chsh", "state"): 1.54,
    ("di", "chsh", "measurement"): 2.72,
}


def max_violation(trust: str, inequality: str) -> float:
    if inequality == "steering":
        if trust == "di":
            raise ValueError("steering requires a trusted side")
        return 2.0
    return 2.0 * math.sqrt(2.0)


def default_alpha(trust: str, inequality: str) -> float:
    try:
        return DEFAULT_ALPHA[(trust, inequality)]
    except KeyError:
        raise ValueError(f"no default constant for ({trust}, {inequality})") from None


@dataclass(frozen=True)
class CertificateParams:
    """Protocol parameters: trust setting, inequality, statistics model,
    deviation budget epsilon, slack divisor q, confidence exponent x, and
    the self-testing slope alpha (defaulted from the published constants)."""

    trust: str
    inequality: str
    iid: bool
    epsilon: float
    q: float
    x: float
    alpha: float | None = None
    alpha_source: str = "paper-default"

    def __post_init__(self):
        if self.trust not in TRUSTS:
            raise ValueError(f"unknown trust setting {self.trust!r}")
        if self.inequality not in INEQUALITIES:
            raise ValueError(f"unknown inequality {self.inequality!r}")
        if self.trust == "di" and self.inequality == "steering":
            raise ValueError("steering requires a trusted side")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must sit in (0, 1)")
        if self.q < 1.0:
            raise ValueError("q must be at least 1")
        if self.x <= 0.0:
            raise ValueError("x must be positive")
        if self.alpha is None:
            object.__setattr__(self, "alpha", default_alpha(self.trust, self.inequality))
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")

    @property
    def max_violation(self) -> float:
        return max_violation(self.trust, self.inequality)

    @property
    def violation(self) -> float:
        return self.max_violation - self.epsilon


@dataclass(frozen=True)
class FidelityCertificate:
    fidelity: float
    probability: float
    copies: int
    trust: str
    inequality: str
    iid: bool
    vacuous: bool
    params: CertificateParams

    def to_json(self) -> dict:
        doc = {
            "schema": "cert/1",
            "fidelity": self.fidelity,
            "probability": self.probability,
            "copies": self.copies,
            "trust": self.trust,
            "inequality": self.inequality,
            "iid": self.iid,
            "vacuous": self.vacuous,
            "formula": _formula_id(self.params),
            "params": {
                "epsilon": self.params.epsilon,
                "q": self.params.q,
                "x": self.params.x,
                "alpha": self.params.alpha,
                "alpha_source": self.params.alpha_source,
            },
        }
        return doc


def _formula_id(params: CertificateParams) -> str:
    stats = "iid" if params.iid else "noniid"
    return f"{params.inequality}-{stats}"


def required_copies(params: CertificateParams) -> int:
    """Number of pairs the source must prepare, including the withheld one.

    log is the natural logarithm (only that choice reproduces the quoted
    copy counts); K - 1 is forced even so the tested pairs split into two
    equal halves.
    """
    eps, q, x = params.epsilon, params.q, params.x
    log_term = math.log(1.0 / eps)
    if params.inequality == "steering":
        base = 4.0 if params.iid else 16.0
    else:
        base = 8.0 if params.iid else 32.0
    k = math.ceil(base * q * q * x / (eps * eps) * log_term + 1.0)
    if (k - 1) % 2:
        k += 1
    return int(k)


def chernoff_tail(copies: int, deviation: float) -> float:
    """Tail bound exp(-K d^2 / 2) for a mean of K independent +-1 scores
    deviating by d."""
    if copies < 1:
        raise ValueError("copies must be at least 1")
    if deviation < 0.0:
        raise ValueError("deviation must be nonnegative")
    return math.exp(-0.5 * copies * deviation * deviation)


def azuma_tail(copies: int, deviation: float) -> float:
    """Martingale tail bound exp(-K d^2 / 8); increments are bounded by 2."""
    if copies < 1:
        raise ValueError("copies must be at least 1")
    if deviation < 0.0:
        raise ValueError("deviation must be nonnegative")
    return math.exp(-copies * deviation * deviation / 8.0)


def _noniid_inner(params: CertificateParams) -> float:
    eps, q, x = params.epsilon, params.q, params.x
    log_term = math.log(1.0 / eps)
    if params.inequality == "steering":
        return (
            2.0 * eps / q
            + 0.5 * eps
            + (4.0 * q * q * x * eps * log_term + 2.0 * eps * eps)
            / (8.0 * q * q * x * log_term + eps * eps)
        )
    return (
        4.0 * eps / q
        + 0.75 * eps
        + (4.0 * q * q * x * eps * log_term + (2.0 + math.sqrt(2.0)) * eps * eps)
        / (16.0 * q * q * x * log_term + 2.0 * eps * eps)
    )


def fidelity_bound(params: CertificateParams) -> FidelityCertificate:
    """Certified fidelity of the withheld pair and the confidence with
    which the certificate holds."""
    eps, q, x, alpha = params.epsilon, params.q, params.x, params.alpha
    if params.iid:
        slack = (2.0 if params.inequality == "steering" else 4.0) * eps / q
        raw_f = 1.0 - alpha * (slack + eps)
        raw_p = 1.0 - eps**x
    else:
        radical = math.sqrt(alpha * _noniid_inner(params))
        raw_f = 1.0 - radical
        raw_p = (1.0 - eps**x) * (1.0 - radical)
    vacuous = raw_f <= 0.0 or raw_p <= 0.0
    return FidelityCertificate(
        fidelity=min(1.0, max(0.0, raw_f)),
        probability=min(1.0, max(0.0, raw_p)),
        copies=required_copies(params),
        trust=params.trust,
        inequality=params.inequality,
        iid=params.iid,
        vacuous=vacuous,
        params=params,
    )


def lemma_individual_from_average(eta: float) -> tuple[float, float]:
    """Fidelity of one uniformly chosen copy given an average-fidelity
    deficit eta: bound and confidence are both 1 - sqrt(eta)."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must sit in [0, 1]")
    root = math.sqrt(eta)
    return 1.0 - root, 1.0 - root


def measurement_selftest_fidelity(violation: float, trust: str) -> float:
    """Certified measurement fidelity from an observed violation.

    The trust setting fixes the inequality: steering for one-sided trust,
    CHSH for none.
    """
    if trust not in TRUSTS:
        raise ValueError(f"unknown trust setting {trust!r}")
    inequality = "steering" if trust == "1sdi" else "chsh"
    top = max_violation(trust, inequality)
    if violation > top + 1e-12:
        raise ValueError(f"violation {violation} exceeds the maximum {top}")
    eps = max(0.0, top - violation)
    return max(0.0, 1.0 - MEASUREMENT_ALPHA[trust] * eps)


# ---------------------------------------------------------------------------
# Internal derivation bookkeeping (partition sizes and deviation split).


@dataclass(frozen=True)
class DerivationScratch:
    n: int
    k_xx: float
    k_zz: float
    mu_xx: float
    mu_zz: float
    eps_xx: float
    eps_zz: float
    eps_prime_xx: float

    @classmethod
    def from_params(cls, params: CertificateParams) -> "DerivationScratch":
        n = required_copies(params) - 1
        return cls(
            n=n,
            k_xx=(n + 2) / 2.0,
            k_zz=n / 2.0,
            mu_xx=1.0,
            mu_zz=1.0,
            eps_xx=params.epsilon / 2.0,
            eps_zz=params.epsilon / 2.0,
            eps_prime_xx=params.epsilon / 2.0 if params.iid else 2.0,
        )


# ---------------------------------------------------------------------------
# Inverse planner.


@dataclass
class PlanResult:
    feasible: bool
    params: CertificateParams | None
    certificate: FidelityCertificate | None
    reason: str = ""

    def to_json(self) -> dict:
        doc = {"schema": "cert/1", "kind": "plan", "feasible": self.feasible, "reason": self.reason}
        if self.certificate is not None:
            doc["certificate"] = self.certificate.to_json()
        return doc


def _min_q_for_targets(
    trust, inequality, iid, eps, x, target_f, target_p, alpha, q_hi=1e9
) -> float | None:
    """Smallest q meeting both targets at fixed (eps, x); None if q_hi fails."""

    def ok(q):
        cert = fidelity_bound(CertificateParams(trust, inequality, iid, eps, q, x, alpha))
        return cert.fidelity >= target_f and cert.probability >= target_p and not cert.vacuous

    if not ok(q_hi):
        return None
    lo, hi = 1.0, q_hi
    if ok(lo):
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-9 * hi:
            break
    return hi


def plan(
    target_fidelity: float,
    target_probability: float,
    trust: str,
    inequality: str,
    iid: bool,
    epsilon: float | None = None,
    epsilon_bounds: tuple = (1e-3, 0.999),
    x_bounds: tuple = (0.05, 16.0),
    max_copies: float | None = None,
    alpha: float | None = None,
    alpha_source: str = "paper-default",
) -> PlanResult:
    """Parameters minimizing the copy count subject to the certificate
    meeting (target_fidelity, target_probability).

    Grid search over x (and epsilon when free) with bisection refinement;
    the returned parameters are re-verified through ``fidelity_bound``.
    Deterministic: ties resolve to the smallest (epsilon, q, x).
    """
    if not 0.0 < target_fidelity < 1.0:
        raise ValueError("target fidelity must sit in (0, 1)")
    if not 0.0 <= target_probability < 1.0:
        raise ValueError("target probability must sit in [0, 1)")
    alpha_value = alpha if alpha is not None else default_alpha(trust, inequality)

    def copies_for(eps, q, x):
        return required_copies(CertificateParams(trust, inequality, iid, eps, q, x, alpha_value))

    def best_over_x(eps):
        # x must at least cover the probability target through 1 - eps^x.
        best = None
        x_lo, x_hi = x_bounds
        if target_probability > 0.0:
            x_floor = math.log(1.0 - target_probability) / math.log(eps)
            x_lo = max(x_lo, min(x_floor, x_hi))
        xs = [x_lo * (x_hi / x_lo) ** (t / 39.0) for t in range(40)]
        for x in xs:
            q = _min_q_for_targets(
                trust, inequality, iid, eps, x, target_fidelity, target_probability, alpha_value
            )
            if q is None:
                continue
            k = copies_for(eps, q, x)
            if best is None or k < best[0] or (k == best[0] and (q, x) < (best[1], best[2])):
                best = (k, q, x)
        return best

    if epsilon is not None:
        eps_grid = [float(epsilon)]
    else:
        lo, hi = epsilon_bounds
        hi = min(hi, 0.999)
        eps_grid = [lo * (hi / lo) ** (t / 119.0) for t in range(120)]

    best = None
    for eps in eps_grid:
        found = best_over_x(eps)
        if found is None:
            continue
        k, q, x = found
        if max_copies is not None and k > max_copies:
            continue
        key = (k, eps, q, x)
        if best is None or key < best:
            best = key
    if best is None:
        reason = "fidelity/probability targets unreachable"
        if max_copies is not None:
            reason += f" within {max_copies:g} copies"
        reason += f" for {trust}/{inequality} ({'iid' if iid else 'non-iid'})"
        return PlanResult(False, None, None, reason)
    k, eps, q, x = best
    params = CertificateParams(trust, inequality, iid, eps, q * (1.0 + 1e-9), x, alpha_value, alpha_source)
    cert = fidelity_bound(params)
    if cert.fidelity < target_fidelity or cert.probability < target_probability:
        return PlanResult(False, None, None, "re-verification failed at the optimum")
    return PlanResult(True, params, cert)


def werner_visibility_threshold(
    iid: bool,
    target_fidelity: float = 2.0 / 3.0,
    target_probability: float | None = None,
    max_copies: float | None = None,
    trust: str = "1sdi",
    inequality: str = "steering",
    alpha: float | None = None,
    tol: float = 5e-4,
) -> float:
    """Minimum Werner visibility whose violation level still certifies the
    fidelity target.

    A visibility-v source attains violation v * (maximal violation), so the
    protocol must run at epsilon = (1 - v) * maximal violation.  Defaults:
    confidence 0.75 with at most 1.2e5 copies in the iid setting, 0.6 with
    at most 1e8 copies in the martingale setting (the feasibility envelope
    of the quoted operating points).
    """
    if target_probability is None:
        target_probability = 0.75 if iid else 0.6
    if max_copies is None:
        max_copies = 1.2e5 if iid else 1e8
    top = max_violation(trust, inequality)

    def feasible(v):
        eps = (1.0 - v) * top
        if eps <= 0.0 or eps >= 1.0:
            return eps <= 0.0
        result = plan(
            target_fidelity,
            target_probability,
            trust,
            inequality,
            iid,
            epsilon=eps,
            max_copies=max_copies,
            alpha=alpha,
        )
        return result.feasible

    lo, hi = 0.5, 1.0
    if feasible(lo):
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# Sweep emitter (plot-ready certification curves).


def sweep_rows(
    trust: str,
    inequality: str,
    epsilons,
    q: float,
    x: float,
    alpha: float | None = None,
) -> list[dict]:
    """Rows of (epsilon, iid and non-iid fidelity/copies/probability)."""
    rows = []
    for eps in epsilons:
        row = {"epsilon": float(eps), "violation": max_violation(trust, inequality) - float(eps)}
        for iid in (True, False):
            cert = fidelity_bound(
                CertificateParams(trust, inequality, iid, float(eps), q, x, alpha)
            )
            tag = "iid" if iid else "noniid"
            row[f"fidelity_{tag}"] = cert.fidelity
            row[f"copies_{tag}"] = cert.copies
            row[f"probability_{tag}"] = cert.probability
        rows.append(row)
    return rows


def write_certificate(cert: FidelityCertificate, path) -> None:
    with open(path, "w") as handle:
        json.dump(cert.to_json(), handle, sort_keys=True, indent=1)
        handle.write("\n")
