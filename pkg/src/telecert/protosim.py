"""Monte Carlo execution of the test-then-teleport protocol.

A source emits K pairs; one uniformly random pair is withheld, the rest
are split into equal subsets and measured in fixed bases; the run is
accepted when the summed average correlations sit within epsilon of the
maximal violation.  Accepted runs carry the finite-statistics
certificate, which the soundness harness compares against the true
extracted fidelity of the withheld pair.

Outcome sampling uses the exact Born-rule joint distribution, reduced to
(marginal, marginal, correlation) triples so that long iid and
round-indexed sources vectorize over rounds; history-adaptive sources
fall back to a per-round loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cert, qcore

SQRT2 = math.sqrt(2.0)

#: Subset measurement bases per protocol mode.  Steering-type runs use
#: two subsets (X x X and Z x Z); fully untrusted CHSH runs use the four
#: setting pairs.  CHSH with one-sided trust is the steering layout with
#: the statistic rescaled by sqrt(2).
STEERING_SETTINGS = ("XX", "ZZ")
CHSH_SETTINGS = ("00", "01", "10", "11")
CHSH_SIGNS = (1.0, 1.0, 1.0, -1.0)


def _protocol_mode(params: cert.CertificateParams) -> str:
    if params.inequality == "steering" or params.trust == "1sdi":
        return "two-basis"
    return "four-setting"


# ---------------------------------------------------------------------------
# Sources


class Source:
    """Base source: override ``statistics`` for vectorized sampling or
    ``pair`` for the physical states handed to extraction/teleportation."""

    adaptive = False

    def __init__(self, mode: str):
        if mode not in ("two-basis", "four-setting"):
            raise ValueError(f"unknown protocol mode {mode!r}")
        self.mode = mode

    # (marginal_a, marginal_b, correlation) per round for given settings
    def statistics(self, indices: np.ndarray, settings: np.ndarray):
        m_a = np.empty(len(indices))
        m_b = np.empty(len(indices))
        corr = np.empty(len(indices))
        for pos, (i, t) in enumerate(zip(indices, settings)):
            m_a[pos], m_b[pos], corr[pos] = self._single_statistics(int(i), int(t))
        return m_a, m_b, corr

    def _single_statistics(self, index: int, setting: int):
        state, model = self.pair(index)
        a_obs, b_obs = self._observables(model, setting)
        rho = qcore._as_density(state)
        d_b = model.bob_dim
        eye_a = np.eye(rho.shape[0] // d_b)
        eye_b = np.eye(d_b)
        m_a = np.trace(np.kron(a_obs, eye_b) @ rho).real
        m_b = np.trace(np.kron(eye_a, b_obs) @ rho).real
        corr = np.trace(np.kron(a_obs, b_obs) @ rho).real
        return m_a, m_b, corr

    def _observables(self, model: qcore.MeasurementModel, setting: int):
        if self.mode == "two-basis":
            # subset 0: X x X, subset 1: Z x Z; Alice's side is trusted.
            model_setting = 1 if setting == 0 else 0
            a_obs = qcore.SIGMA_X if setting == 0 else qcore.SIGMA_Z
            return a_obs, model.bob_observable(model_setting)
        x, y = divmod(setting, 2)
        return model.alice_observable(x), model.bob_observable(y)

    def pair(self, index: int):
        raise NotImplementedError


class IidSource(Source):
    """Identical (state, model) every round."""

    def __init__(self, mode: str, state: qcore.TwoQubitState, model: qcore.MeasurementModel):
        super().__init__(mode)
        self.state = state
        self.model = model
        n_settings = 2 if mode == "two-basis" else 4
        self._stats = [self._single_statistics(0, t) for t in range(n_settings)]

    def statistics(self, indices, settings):
        table = np.array(self._stats)
        chosen = table[settings]
        return chosen[:, 0], chosen[:, 1], chosen[:, 2]

    def pair(self, index: int):
        return self.state, self.model


def honest_ideal_source(mode: str) -> IidSource:
    if mode == "two-basis":
        return IidSource(mode, qcore.bell_state(), qcore.ideal_model())
    return IidSource(
        mode,
        qcore.TwoQubitState(np.outer(qcore.rotated_bell_vector(), qcore.rotated_bell_vector().conj())),
        qcore.ideal_model(device_independent=True),
    )


def werner_source(mode: str, visibility: float) -> IidSource:
    if mode == "two-basis":
        return IidSource(mode, qcore.werner_state(visibility), qcore.ideal_model())
    return IidSource(
        mode, qcore.rotated_werner_state(visibility), qcore.ideal_model(device_independent=True)
    )


class VisibilitySequenceSource(Source):
    """Round-indexed Werner-type source with ideal devices; visibility may
    vary per round, and one round may be replaced by an arbitrary pair."""

    def __init__(self, mode: str, visibilities: np.ndarray, special: dict | None = None):
        super().__init__(mode)
        self.visibilities = np.asarray(visibilities, dtype=float)
        if np.any(self.visibilities < 0.0) or np.any(self.visibilities > 1.0):
            raise ValueError("visibilities must sit in [0, 1]")
        self.special = special or {}
        if mode == "two-basis":
            self.model = qcore.ideal_model()
        else:
            self.model = qcore.ideal_model(device_independent=True)

    def statistics(self, indices, settings):
        v = self.visibilities[indices]
        if self.mode == "two-basis":
            corr = v.copy()
        else:
            signs = np.array(CHSH_SIGNS)[settings]
            corr = v * signs / SQRT2
        m_a = np.zeros(len(indices))
        m_b = np.zeros(len(indices))
        for idx, (state, _) in self.special.items():
            mask = indices == idx
            if not np.any(mask):
                continue
            for pos in np.flatnonzero(mask):
                m_a[pos], m_b[pos], corr[pos] = Source._single_statistics(
                    self, int(indices[pos]), int(settings[pos])
                )
        return m_a, m_b, corr

    def pair(self, index: int):
        if index in self.special:
            return self.special[index]
        v = float(self.visibilities[index])
        if self.mode == "two-basis":
            return qcore.werner_state(v), self.model
        return qcore.rotated_werner_state(v), self.model


def one_bad_pair_source(mode: str, copies: int, bad_index: int, visibility: float = 1.0) -> VisibilitySequenceSource:
    """All pairs at the given visibility except one maximally mixed pair."""
    bad_state = qcore.TwoQubitState(np.eye(4) / 4.0)
    model = qcore.ideal_model() if mode == "two-basis" else qcore.ideal_model(device_independent=True)
    return VisibilitySequenceSource(
        mode,
        np.full(copies, visibility),
        special={int(bad_index): (bad_state, model)},
    )


def drifting_visibility_source(mode: str, copies: int, v_start: float, v_end: float) -> VisibilitySequenceSource:
    return VisibilitySequenceSource(mode, np.linspace(v_start, v_end, copies))


class AdaptiveSource(Source):
    """History-dependent strategy: ``strategy(history)`` returns the next
    (state, model); history holds (setting, a, b) triples of measured
    rounds in measurement order.  Sampling is per-round (slow path)."""

    adaptive = True

    def __init__(self, mode: str, strategy):
        super().__init__(mode)
        self.strategy = strategy
        self._emitted: dict = {}

    def emit(self, index: int, history: list):
        pair = self.strategy(list(history))
        self._emitted[index] = pair
        return pair

    def pair(self, index: int):
        if index not in self._emitted:
            # The withheld pair sees the full measured history.
            raise RuntimeError("adaptive pair requested before emission")
        return self._emitted[index]


# ---------------------------------------------------------------------------
# Transcripts and the protocol run


@dataclass
class ProtocolTranscript:
    copies: int
    withheld: int
    subsets: list
    setting_labels: tuple
    settings: np.ndarray = field(repr=False)
    outcomes_a: np.ndarray = field(repr=False)
    outcomes_b: np.ndarray = field(repr=False)
    subset_averages: list = field(default_factory=list)
    statistic: float = 0.0
    threshold: float = 0.0
    accepted: bool = False
    memoryless: bool = False

    @property
    def correlations(self) -> np.ndarray:
        return self.outcomes_a * self.outcomes_b

    def check(self) -> None:
        sizes = {len(s) for s in self.subsets}
        if len(sizes) != 1:
            raise ValueError("subsets are not equal-sized")
        measured = np.concatenate(self.subsets)
        if self.withheld in measured:
            raise ValueError("withheld pair was measured")
        if len(measured) != self.copies - 1 or len(set(measured.tolist())) != self.copies - 1:
            raise ValueError("subsets do not partition the tested pairs")
        chat = self.correlations[measured]
        if not np.all(np.abs(chat) == 1):
            raise ValueError("correlations must be +-1")

    def to_json(self, include_rounds: bool = True) -> dict:
        doc = {
            "schema": "protosim/1",
            "copies": self.copies,
            "withheld": int(self.withheld),
            "setting_labels": list(self.setting_labels),
            "subset_averages": [float(a) for a in self.subset_averages],
            "statistic": self.statistic,
            "threshold": self.threshold,
            "accepted": self.accepted,
            "memoryless": self.memoryless,
        }
        if include_rounds:
            doc["subsets"] = [s.tolist() for s in self.subsets]
            doc["settings"] = self.settings.tolist()
            doc["outcomes_a"] = self.outcomes_a.tolist()
            doc["outcomes_b"] = self.outcomes_b.tolist()
        return doc


def adjusted_copies(params: cert.CertificateParams) -> int:
    """Copy count with the tested pairs divisible into the mode's subsets."""
    k = cert.required_copies(params)
    groups = 2 if _protocol_mode(params) == "two-basis" else 4
    while (k - 1) % groups:
        k += 1
    return k


def _sample_outcomes(m_a, m_b, corr, rng):
    """Exact sampling of (+-1, +-1) pairs from marginals and correlation."""
    p_a = np.clip(0.5 * (1.0 + m_a), 0.0, 1.0)
    a = np.where(rng.random(len(m_a)) < p_a, 1, -1)
    denom = 1.0 + a * m_a
    denom = np.where(np.abs(denom) < 1e-15, 1e-15, denom)
    cond = (m_b + a * corr) / denom
    p_b = np.clip(0.5 * (1.0 + cond), 0.0, 1.0)
    b = np.where(rng.random(len(m_b)) < p_b, 1, -1)
    return a.astype(np.int8), b.astype(np.int8)


def run_protocol(
    source: Source,
    params: cert.CertificateParams,
    rng,
    memoryless: bool = False,
):
    """One protocol execution: returns (transcript, certificate or None).

    The withheld pair is chosen before any measurement and never sampled;
    ``memoryless`` only changes the recorded measurement order (pairs
    consumed as produced instead of subset-by-subset) and is certificate
    neutral.
    """
    mode = _protocol_mode(params)
    if source.mode != mode:
        raise ValueError(f"source mode {source.mode!r} does not match params ({mode})")
    k = adjusted_copies(params)
    groups = 2 if mode == "two-basis" else 4
    labels = STEERING_SETTINGS if mode == "two-basis" else CHSH_SETTINGS
    r = int(rng.integers(k))
    remaining = np.delete(np.arange(k), r)
    perm = rng.permutation(remaining)
    size = (k - 1) // groups
    subsets = [np.sort(perm[t * size : (t + 1) * size]) for t in range(groups)]

    settings = np.full(k, -1, dtype=np.int8)
    for t, subset in enumerate(subsets):
        settings[subset] = t
    outcomes_a = np.zeros(k, dtype=np.int8)
    outcomes_b = np.zeros(k, dtype=np.int8)

    if source.adaptive:
        history: list = []
        order = [i for i in range(k) if i != r] if memoryless else np.concatenate(subsets).tolist()
        for i in order:
            t = int(settings[i])
            state, model = source.emit(i, history)
            probe = IidSource(mode, state, model)
            m_a, m_b, corr = probe.statistics(np.array([0]), np.array([t]))
            a, b = _sample_outcomes(m_a, m_b, corr, rng)
            outcomes_a[i], outcomes_b[i] = a[0], b[0]
            history.append((t, int(a[0]), int(b[0])))
        source.emit(r, history)
    else:
        measured = np.concatenate(subsets)
        m_a, m_b, corr = source.statistics(measured, settings[measured])
        a, b = _sample_outcomes(m_a, m_b, corr, rng)
        outcomes_a[measured] = a
        outcomes_b[measured] = b

    chat = (outcomes_a * outcomes_b).astype(float)
    averages = [float(np.mean(chat[subset])) for subset in subsets]
    if mode == "two-basis":
        statistic = sum(averages)
        if params.inequality == "chsh":
            statistic *= SQRT2
    else:
        statistic = sum(s * a for s, a in zip(CHSH_SIGNS, averages))
    threshold = params.max_violation - params.epsilon
    accepted = statistic >= threshold

    transcript = ProtocolTranscript(
        copies=k,
        withheld=r,
        subsets=subsets,
        setting_labels=labels,
        settings=settings,
        outcomes_a=outcomes_a,
        outcomes_b=outcomes_b,
        subset_averages=averages,
        statistic=float(statistic),
        threshold=float(threshold),
        accepted=bool(accepted),
        memoryless=memoryless,
    )
    certificate = cert.fidelity_bound(params) if accepted else None
    return transcript, certificate


# ---------------------------------------------------------------------------
# Extraction-based soundness evaluation


def extraction_target(mode: str) -> np.ndarray:
    return qcore.bell_vector() if mode == "two-basis" else qcore.rotated_bell_vector()


def true_extracted_fidelity(source: Source, index: int) -> float:
    """Fidelity of the extraction output of one pair against the mode's
    reference state, evaluated at the devices the source actually used."""
    state, model = source.pair(index)
    side = "bob" if source.mode == "two-basis" else "both"
    extracted = qcore.swap_isometry_extract(state, model, side=side)
    return qcore.fidelity_to_pure(extracted, extraction_target(source.mode))


@dataclass
class SoundnessStats:
    trials: int
    accepted: int
    bound_violations: int
    certificate_fidelity: float
    certificate_probability: float
    min_true_fidelity: float

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.trials if self.trials else 0.0

    @property
    def violation_fraction(self) -> float:
        return self.bound_violations / self.accepted if self.accepted else 0.0

    def margin(self, sigmas: float = 3.0) -> float:
        if not self.accepted:
            return 0.0
        p = max(self.violation_fraction, 1.0 / self.accepted)
        return sigmas * math.sqrt(p * (1.0 - p) / self.accepted)

    def honored(self, sigmas: float = 3.0) -> bool:
        allowed = (1.0 - self.certificate_probability) + self.margin(sigmas)
        return self.violation_fraction <= allowed

    def to_json(self) -> dict:
        return {
            "schema": "protosim/1",
            "kind": "soundness",
            "trials": self.trials,
            "accepted": self.accepted,
            "bound_violations": self.bound_violations,
            "violation_fraction": self.violation_fraction,
            "certificate_fidelity": self.certificate_fidelity,
            "certificate_probability": self.certificate_probability,
            "min_true_fidelity": self.min_true_fidelity,
        }


def soundness_experiment(
    source_factory,
    params: cert.CertificateParams,
    n_trials: int,
    seed: int,
) -> SoundnessStats:
    """Repeated protocol runs with per-trial derived seeds.

    ``source_factory(copies, rng)`` builds a fresh source per trial; over
    accepted trials the certified bound is compared against the true
    extracted fidelity of the withheld pair.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    k = adjusted_copies(params)
    streams = np.random.SeedSequence(seed).spawn(n_trials)
    accepted = 0
    violations = 0
    cert_f = cert_p = None
    min_true = 1.0
    for stream in streams:
        rng = np.random.default_rng(stream)
        source = source_factory(k, rng)
        transcript, certificate = run_protocol(source, params, rng)
        if certificate is None:
            continue
        accepted += 1
        cert_f, cert_p = certificate.fidelity, certificate.probability
        true_f = true_extracted_fidelity(source, transcript.withheld)
        min_true = min(min_true, true_f)
        if true_f < certificate.fidelity - 1e-12:
            violations += 1
    if cert_f is None:
        template = cert.fidelity_bound(params)
        cert_f, cert_p = template.fidelity, template.probability
    return SoundnessStats(
        trials=n_trials,
        accepted=accepted,
        bound_violations=violations,
        certificate_fidelity=cert_f,
        certificate_probability=cert_p,
        min_true_fidelity=min_true,
    )


def teleport_with_certificate(
    source: Source,
    transcript: ProtocolTranscript,
    certificate: cert.FidelityCertificate,
    n_inputs: int,
    rng,
) -> dict:
    """Teleport through the withheld pair of an accepted run and compare
    the empirical average fidelity against the certified bound."""
    if not transcript.accepted:
        raise ValueError("transcript was rejected; nothing to teleport through")
    state, model = source.pair(transcript.withheld)
    rho = qcore._as_density(state)
    if model.bob_dim != 2 or rho.shape != (4, 4):
        raise ValueError("teleportation needs qubit pairs on both sides")
    empirical = qcore.teleport_average_fidelity(qcore.TwoQubitState(rho), n_inputs, rng)
    entangled_fidelity = true_extracted_fidelity(source, transcript.withheld)
    return {
        "schema": "protosim/1",
        "kind": "teleport",
        "empirical_fidelity": empirical,
        "entangled_fidelity": entangled_fidelity,
        "certified_bound": certificate.fidelity,
        "margin": empirical - certificate.fidelity,
        "n_inputs": n_inputs,
    }

