"""Performance metrics derived from a solved steady state.

Maps a converged :class:`~loracell.analytic.SteadyState` to delivery
ratios (unconfirmed uplink UU, confirmed uplink CU, confirmed downlink
CD), delays, Jain's fairness index, the distribution of retransmission
counts, and the decomposition of PHY losses by cause.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import SteadyState, attempt_distributions
from .scenario import N_SF, ScenarioConfig


class MetricsError(ValueError):
    """A metric is undefined for the given state (e.g. no traffic to measure)."""


@dataclass(frozen=True)
class MetricsReport:
    """All scalar metrics of one solved configuration.

    ``delta_ul``, ``delta_dl`` and ``retx_dist`` are ``None`` when there
    is no confirmed traffic to measure them on (``alpha`` = 0, or no
    confirmed packet can succeed).
    """

    uu: float
    cu: float
    cd: float
    uu_per_sf: tuple[float, ...]
    cu_per_sf: tuple[float, ...]
    cd_per_sf: tuple[float, ...]
    delta_ul: float | None         # mean first-attempt-to-gateway delay [s]
    delta_dl: float | None         # mean first-attempt-to-ACK delay [s]
    jain: float
    retx_dist: tuple[float, ...] | None   # success share per attempt 1..m, then failure share
    f_nmd: float                   # PHY loss share: no free demodulator
    f_gwtx: float                  # PHY loss share: gateway transmitting
    f_int: float                   # PHY loss share: interference

    def to_dict(self) -> dict:
        return {
            "uu": self.uu,
            "cu": self.cu,
            "cd": self.cd,
            "uu_per_sf": list(self.uu_per_sf),
            "cu_per_sf": list(self.cu_per_sf),
            "cd_per_sf": list(self.cd_per_sf),
            "delta_ul": self.delta_ul,
            "delta_dl": self.delta_dl,
            "jain": self.jain,
            "retx_dist": None if self.retx_dist is None else list(self.retx_dist),
            "f_nmd": self.f_nmd,
            "f_gwtx": self.f_gwtx,
            "f_int": self.f_int,
        }


def reliability(state: SteadyState, cfg: ScenarioConfig):
    """Delivery ratios UU, CU, CD with their per-SF vectors.

    An unconfirmed packet is delivered if any of its h copies reaches the
    gateway; a confirmed packet counts for CU when any of its m attempts
    reaches the gateway and for CD when the ACK also comes back.
    """
    p_u = np.asarray(cfg.p_unconfirmed.p)
    p_c = np.asarray(cfg.p_confirmed.p)
    p_ul_h, _ = attempt_distributions(state.s_ul, state.s_dl, cfg.h)
    p_ul_m, p_dl_m = attempt_distributions(state.s_ul, state.s_dl, cfg.m)
    uu_i = p_ul_h.sum(axis=1)
    cu_i = p_ul_m.sum(axis=1)
    cd_i = p_dl_m.sum(axis=1)
    return float(p_u @ uu_i), float(p_c @ cu_i), float(p_c @ cd_i), uu_i, cu_i, cd_i


def delays(state: SteadyState, cfg: ScenarioConfig) -> tuple[float, float]:
    """Mean uplink and downlink delays of successful confirmed packets [s].

    Attempt j starts (j-1) inter-transmission periods after the first
    one; each period is the duty-cycle silence plus the mean
    retransmission timeout.  The ACK itself lands 1 s (RX1) or 2 s (RX2)
    after the uplink, weighted by the raw per-window success
    probabilities, which makes the ACK term a lower bound on the
    conditional ACK delay when those probabilities do not sum to 1.
    Failed packets are excluded: the per-attempt weights are normalized
    over successful attempts, per SF.
    """
    if cfg.alpha <= 0.0:
        raise MetricsError("delays are undefined without confirmed traffic (alpha = 0)")
    p_c = np.asarray(cfg.p_confirmed.p)
    t_data = np.asarray(cfg.airtimes.t_data)
    t_ack1 = np.asarray(cfg.airtimes.t_ack1)
    t_ack2 = np.asarray(cfg.airtimes.t_ack2)

    gamma = (cfg.delta_sb1 + 1.0) * t_data + cfg.mu_retx
    phi = state.s_sb1 * (1.0 + t_ack1) + state.s_sb2 * (2.0 + t_ack2)

    p_ul, p_dl = attempt_distributions(state.s_ul, state.s_dl, cfg.m)
    if not np.any(p_dl.sum(axis=1) > 0.0):
        raise MetricsError("downlink delay undefined: no confirmed packet can succeed")

    j0 = np.arange(cfg.m, dtype=float)  # attempt index j-1
    delta_ul = 0.0
    delta_dl = 0.0
    for i in range(N_SF):
        ul_total = float(p_ul[i].sum())
        if ul_total > 0.0:
            weights = p_ul[i] / ul_total
            delta_ul += p_c[i] * float(weights @ (t_data[i] + j0 * gamma[i]))
        dl_total = float(p_dl[i].sum())
        if dl_total > 0.0:
            weights = p_dl[i] / dl_total
            delta_dl += p_c[i] * float(
                weights @ (t_data[i] + j0 * gamma[i] + (j0 + 1.0) * phi[i])
            )
    return float(delta_ul), float(delta_dl)


def jain_index(x) -> float:
    """Jain's fairness index (sum x)^2 / (n sum x^2); 1 means perfectly fair."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise MetricsError("fairness undefined for an empty allocation vector")
    if np.any(x < 0.0):
        raise MetricsError("fairness requires non-negative allocations")
    total = float(x.sum())
    if total <= 0.0:
        raise MetricsError("fairness undefined for an all-zero allocation vector")
    return float(total * total / (x.size * float(np.sum(x * x))))


def fairness_categories(state: SteadyState, cfg: ScenarioConfig) -> np.ndarray:
    """Per-category throughput proxies for the fairness index.

    Categories are the up-to-12 (traffic type, SF) populations: the
    uplink success probability UU_i for unconfirmed devices and CU_i for
    confirmed ones.  Structurally empty categories (no devices) are
    excluded so they cannot depress the index.
    """
    _, _, _, uu_i, cu_i, _ = reliability(state, cfg)
    x = []
    for i in range(N_SF):
        if (1.0 - cfg.alpha) * cfg.p_unconfirmed.p[i] > 0.0:
            x.append(float(uu_i[i]))
    for i in range(N_SF):
        if cfg.alpha * cfg.p_confirmed.p[i] > 0.0:
            x.append(float(cu_i[i]))
    return np.asarray(x)


def fairness(state: SteadyState, cfg: ScenarioConfig) -> float:
    """Jain index over the non-empty (traffic type, SF) categories."""
    return jain_index(fairness_categories(state, cfg))


def retx_distribution(state: SteadyState, cfg: ScenarioConfig) -> np.ndarray:
    """Share of confirmed traffic acknowledged at each attempt, plus failures.

    Returns m+1 entries: the aggregate probability of first ACK success
    at attempt j = 1..m, then the residual share that exhausts all m
    attempts without an ACK.  Entries sum to 1.
    """
    if cfg.alpha <= 0.0:
        raise MetricsError("retransmission distribution undefined without confirmed traffic")
    p_c = np.asarray(cfg.p_confirmed.p)
    _, p_dl = attempt_distributions(state.s_ul, state.s_dl, cfg.m)
    shares = p_c @ p_dl
    fail = 1.0 - float(shares.sum())
    out = np.append(shares, max(fail, 0.0))
    return out / out.sum()


def loss_decomposition(state: SteadyState, cfg: ScenarioConfig) -> tuple[float, float, float]:
    """PHY-layer loss shares by cause, averaged over the PHY SF mix.

    A packet first needs a free demodulator, then must not be hit by a
    gateway transmission, then must survive interference; the three loss
    shares plus the mean uplink success over the PHY SF share sum to 1.
    """
    d = state.rates.d
    s = state.demod.s_demod
    f_nmd = 1.0 - s
    f_gwtx = float(d @ (s * (1.0 - state.s_tx)))
    f_int = float(d @ (s * state.s_tx * (1.0 - state.s_int)))
    return f_nmd, f_gwtx, f_int


def compute_report(state: SteadyState, cfg: ScenarioConfig) -> MetricsReport:
    """Assemble the full metrics report for one solved configuration."""
    uu, cu, cd, uu_i, cu_i, cd_i = reliability(state, cfg)
    if cfg.alpha > 0.0 and np.any(cd_i > 0.0):
        delta_ul, delta_dl = delays(state, cfg)
    else:
        delta_ul = delta_dl = None
    retx = tuple(float(v) for v in retx_distribution(state, cfg)) if cfg.alpha > 0.0 else None
    f_nmd, f_gwtx, f_int = loss_decomposition(state, cfg)
    return MetricsReport(
        uu=uu, cu=cu, cd=cd,
        uu_per_sf=tuple(float(v) for v in uu_i),
        cu_per_sf=tuple(float(v) for v in cu_i),
        cd_per_sf=tuple(float(v) for v in cd_i),
        delta_ul=delta_ul, delta_dl=delta_dl,
        jain=fairness(state, cfg),
        retx_dist=retx,
        f_nmd=f_nmd, f_gwtx=f_gwtx, f_int=f_int,
    )
