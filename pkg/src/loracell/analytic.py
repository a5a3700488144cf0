"""Coupled fixed-point model of uplink and downlink success probabilities.

The cell state is summarized by two per-SF vectors: ``s_ul``, the
probability that an uplink transmission is accepted by the gateway
(survives interference, is not trampled by a gateway transmission, and
finds a free demodulator), and ``s_dl``, the probability that the
matching ACK reaches the device through one of its two receive windows.
Both feed back into each other through retransmission traffic, gateway
duty cycling and demodulator occupancy, so the model is solved by plain
fixed-point iteration from the all-ones starting point.

Traffic is Poisson and spreading factors are treated as orthogonal:
only same-SF packets on the same channel collide, and collision events
with more than two packets are neglected.  A packet involved in a
two-packet collision may still be captured, with probability ``w_gw``
at the gateway and ``w_ed`` at the device.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .scenario import N_SF, ScenarioConfig


class ModelError(RuntimeError):
    """A model quantity became non-finite or inconsistent during iteration."""


@dataclass(frozen=True)
class TrafficRates:
    """Per-channel packet rates by SF [pck/s] and the PHY-layer SF share."""

    r_c_app: np.ndarray   # confirmed application-layer rate
    r_u_app: np.ndarray   # unconfirmed application-layer rate
    r_c_phy: np.ndarray   # confirmed rate including retransmissions
    r_u_phy: np.ndarray   # unconfirmed rate including repetitions
    r_phy: np.ndarray     # total PHY rate per channel
    d: np.ndarray         # share of PHY packets per SF (zeros when idle)


@dataclass(frozen=True)
class SubBandState:
    """Alternating renewal process of one downlink sub-band.

    The sub-band is ON while allowed to transmit and OFF while blocked by
    its duty cycle after an ACK.  An idle sub-band (no ACK traffic) is
    always ON by convention: ``e_on`` is infinite and ``e_off`` zero.
    """

    r: np.ndarray         # per-SF rate of ACKs attempted in this sub-band
    b: np.ndarray         # SF distribution of those ACKs (zeros when idle)
    e_on: float           # mean ON sojourn [s]
    e_off: float          # mean OFF sojourn [s]
    p_on: float
    p_off: float
    p_t: float            # probability the gateway may transmit here


@dataclass(frozen=True)
class DemodChainState:
    """Occupancy of the gateway demodulator bank.

    Demodulators are filled in order, so each one only sees the packets
    that found all earlier ones locked; ``p_lock`` is therefore
    non-increasing.
    """

    e_lock: float         # mean time a demodulator stays locked on a packet [s]
    e_avail: np.ndarray   # mean idle time per demodulator [s]
    p_lock: np.ndarray    # probability each demodulator is locked
    s_demod: float        # probability an arrival finds some demodulator free


@dataclass(frozen=True)
class SteadyState:
    """Converged (or best) iterate of the fixed-point system."""

    s_ul: np.ndarray          # uplink success probability per SF
    s_dl: np.ndarray          # ACK success probability per SF
    s_int: np.ndarray         # uplink interference survival per SF
    s_tx: np.ndarray          # survival of gateway-transmission overlap per SF
    f_tx1: np.ndarray         # probability of falling in an SB1 TX window
    f_tx2: np.ndarray         # same for SB2
    s_int_ack1: np.ndarray    # ACK interference survival in RX1 per SF
    s_sb1: np.ndarray         # ACK success through RX1 per SF
    s_sb2: float              # ACK success through RX2 (SF independent)
    rates: TrafficRates
    sb1: SubBandState
    sb2: SubBandState
    demod: DemodChainState
    iterations: int
    residual: float           # final sup-norm change of (s_ul, s_dl)
    converged: bool


def _vec(values) -> np.ndarray:
    return np.asarray(values, dtype=float)


def app_rates(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Application-layer packet rates per channel and SF [pck/s]."""
    scale = cfg.lambda_total / cfg.c_channels
    r_c_app = _vec(cfg.p_confirmed.p) * scale * cfg.alpha
    r_u_app = _vec(cfg.p_unconfirmed.p) * scale * (1.0 - cfg.alpha)
    return r_c_app, r_u_app


def attempt_distributions(s_ul, s_dl, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Probability of first success at exactly the j-th attempt, j = 1..n.

    Returns two (6, n) arrays: uplink-only success and uplink-plus-ACK
    success.  Rows are geometric in the per-attempt success probability,
    so row sums are 1 - (1 - p)**n.
    """
    if n < 1:
        raise ValueError(f"attempt count must be >= 1, got {n}")
    s_ul = _vec(s_ul).reshape(N_SF, 1)
    s_dl = _vec(s_dl).reshape(N_SF, 1)
    j = np.arange(n, dtype=float)
    p_ul = s_ul * (1.0 - s_ul) ** j
    q = s_ul * s_dl
    p_dl = q * (1.0 - q) ** j
    return p_ul, p_dl


def phy_rates(cfg: ScenarioConfig, p_dl) -> TrafficRates:
    """PHY-layer rates including repetitions and retransmissions.

    ``p_dl[i, j-1]`` is the probability that a confirmed packet at SF i is
    delivered and acknowledged at exactly attempt j.  A confirmed packet
    is transmitted j times when it succeeds at attempt j < m, and m times
    otherwise, so the expected attempt count lies in [1, m].
    """
    p_dl = np.asarray(p_dl, dtype=float)
    if p_dl.shape != (N_SF, cfg.m):
        raise ValueError(f"p_dl must have shape ({N_SF}, {cfg.m}), got {p_dl.shape}")
    if np.any(p_dl < -1e-12) or np.any(p_dl > 1.0 + 1e-12):
        raise ValueError("p_dl entries must be probabilities in [0, 1]")
    row_sums = p_dl.sum(axis=1)
    if np.any(row_sums > 1.0 + 1e-9):
        raise ValueError("p_dl rows must sum to at most 1")

    m = cfg.m
    if m > 1:
        head = p_dl[:, : m - 1]
        j = np.arange(1, m, dtype=float)
        attempts = head @ j + m * (1.0 - head.sum(axis=1))
    else:
        attempts = np.ones(N_SF)

    r_c_app, r_u_app = app_rates(cfg)
    r_c_phy = r_c_app * attempts
    r_u_phy = r_u_app * cfg.h
    r_phy = r_c_phy + r_u_phy
    total = float(r_phy.sum())
    d = r_phy / total if total > 0.0 else np.zeros(N_SF)
    return TrafficRates(r_c_app, r_u_app, r_c_phy, r_u_phy, r_phy, d)


def interference_survival(t_data, r_phy, w_gw: float):
    """Probability that an uplink survives same-SF interference.

    The vulnerability window of a packet of airtime T against Poisson
    traffic of rate R is 2T.  The packet survives if no other packet
    starts inside it, or if exactly one does and the receiver captures
    the frame (probability ``w_gw``); overlaps of three or more packets
    are treated as always destructive.
    """
    x = 2.0 * np.asarray(t_data, dtype=float) * np.asarray(r_phy, dtype=float)
    return np.exp(-x) * (1.0 + x * w_gw)


def gw_may_transmit(cfg: ScenarioConfig, rates: TrafficRates, k: int) -> float:
    """Probability that the gateway is free to transmit in sub-band k.

    With transmission prioritized (tau_k = 1) the gateway always may;
    otherwise it transmits only if no uplink reception is ongoing, i.e.
    no packet started within its own airtime before now.
    """
    if k not in (1, 2):
        raise ValueError(f"sub-band index must be 1 or 2, got {k}")
    tau = cfg.tau1 if k == 1 else cfg.tau2
    if tau == 1:
        return 1.0
    t_data = _vec(cfg.airtimes.t_data)
    return float(np.exp(-cfg.c_channels * float(rates.r_phy @ t_data)))


def demod_chain(cfg: ScenarioConfig, rates: TrafficRates) -> DemodChainState:
    """Occupancy of the demodulator bank under the total uplink load.

    Each demodulator is an alternating available/locked renewal process;
    demodulator j only receives the arrival stream thinned by the
    probability that demodulators 1..j-1 are all locked.  With no
    traffic every demodulator is free and ``s_demod`` is 1.
    """
    n = cfg.n_demodulators
    t_data = _vec(cfg.airtimes.t_data)
    e_lock = float(rates.d @ t_data)
    total = cfg.c_channels * float(rates.r_phy.sum())
    if total <= 0.0:
        return DemodChainState(e_lock, np.full(n, np.inf), np.zeros(n), 1.0)

    e_avail = np.empty(n)
    p_lock = np.empty(n)
    e_avail[0] = 1.0 / total
    for j in range(n):
        if j > 0:
            prev = e_avail[j - 1]
            # Arrival stream to the later demodulators dies out geometrically;
            # treat an overflowing idle time as an idle demodulator.
            if p_lock[j - 1] <= 0.0 or not math.isfinite(prev) \
                    or prev >= p_lock[j - 1] * 1e300:
                e_avail[j:] = np.inf
                p_lock[j:] = 0.0
                break
            e_avail[j] = prev / p_lock[j - 1]
        p_lock[j] = e_lock / (e_avail[j] + e_lock)
    s_demod = 1.0 - float(np.prod(p_lock))
    return DemodChainState(e_lock, e_avail, p_lock, s_demod)


def _subband(r: np.ndarray, t_ack: np.ndarray, delta: float, p_t: float,
             c_channels: int) -> SubBandState:
    total = float(r.sum())
    if total <= 0.0:
        # No ACK traffic: the sub-band is never duty-cycle blocked.
        return SubBandState(r, np.zeros(N_SF), math.inf, 0.0, 1.0, 0.0, p_t)
    b = r / total
    e_on = 1.0 / (c_channels * total)
    e_off = float(b @ ((1.0 + delta) * t_ack))
    p_on = e_on / (e_on + e_off)
    return SubBandState(r, b, e_on, e_off, p_on, 1.0 - p_on, p_t)


def subband_states(cfg: ScenarioConfig, rates: TrafficRates,
                   s_ul) -> tuple[SubBandState, SubBandState]:
    """ON/OFF renewal state of both downlink sub-bands.

    SB1 serves the ACKs of successfully received confirmed uplinks; SB2
    serves the ones that found SB1 blocked (OFF, or the gateway unable to
    transmit).  An ON sojourn is the wait for the next ACK on any of the
    C channels and an OFF sojourn is the airtime of the chosen ACK plus
    its duty-cycle silence.
    """
    s_ul = _vec(s_ul)
    t_ack1 = _vec(cfg.airtimes.t_ack1)
    t_ack2 = _vec(cfg.airtimes.t_ack2)
    r1 = rates.r_c_phy * s_ul
    sb1 = _subband(r1, t_ack1, cfg.delta_sb1, gw_may_transmit(cfg, rates, 1),
                   cfg.c_channels)
    r2 = r1 * (sb1.p_off + sb1.p_on * (1.0 - sb1.p_t))
    sb2 = _subband(r2, t_ack2, cfg.delta_sb2, gw_may_transmit(cfg, rates, 2),
                   cfg.c_channels)
    return sb1, sb2


def _tx_window_fraction(sb: SubBandState, t_ack: np.ndarray, tau: int,
                        t_data: np.ndarray) -> np.ndarray:
    """Fraction of time an uplink arrival falls in a gateway TX window.

    This is the mean vulnerable time per renewal cycle of the sub-band.
    The printed ratio can exceed 1 when the vulnerability window is
    longer than a whole renewal period (very aggressive ACK load, e.g.
    with duty cycling disabled), so it is clamped to [0, 1] to remain a
    probability.
    """
    if not math.isfinite(sb.e_on):
        return np.zeros(N_SF)
    window = float(sb.b @ t_ack) + t_data * tau
    return np.clip(window / (sb.e_on + sb.e_off), 0.0, 1.0)


def gw_tx_survival(cfg: ScenarioConfig, sb1: SubBandState,
                   sb2: SubBandState) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-SF probability that an uplink is not hit by a gateway transmission.

    An arrival is lost if it lands during an ACK transmission in either
    sub-band, or (when transmission is prioritized) if an ACK starts
    during its own airtime.  The two sub-band processes are treated as
    independent.
    """
    t_data = _vec(cfg.airtimes.t_data)
    f_tx1 = _tx_window_fraction(sb1, _vec(cfg.airtimes.t_ack1), cfg.tau1, t_data)
    f_tx2 = _tx_window_fraction(sb2, _vec(cfg.airtimes.t_ack2), cfg.tau2, t_data)
    s_tx = (1.0 - f_tx1) * (1.0 - f_tx2)
    return f_tx1, f_tx2, s_tx


def ack_interference_survival(cfg: ScenarioConfig, rates: TrafficRates) -> np.ndarray:
    """Probability that an RX1 ACK is not destroyed by uplink traffic.

    The no-collision window is the ACK airtime, extended by the data
    airtime when reception is not prioritized (``tau1 = 1``), since then
    an uplink already in the air when the ACK was due would not have
    stopped it.  A single colliding uplink may still be captured by the
    device with probability ``w_ed``.  The two terms together can
    marginally exceed 1 when ``tau1 = 0`` under light load, so the result
    is truncated at 1.
    """
    t_data = _vec(cfg.airtimes.t_data)
    t_ack1 = _vec(cfg.airtimes.t_ack1)
    r = rates.r_phy
    clear = np.exp(-r * (t_ack1 + cfg.tau1 * t_data))
    both = t_ack1 + t_data
    captured = r * both * np.exp(-r * both) * cfg.w_ed
    return np.minimum(clear + captured, 1.0)


def dl_success(cfg: ScenarioConfig, sb1: SubBandState, sb2: SubBandState,
               s_int_ack1) -> tuple[np.ndarray, float, np.ndarray]:
    """Probability that an ACK for a received uplink reaches the device.

    RX1 succeeds if SB1 is ON, the gateway may transmit there, and the
    ACK survives interference on the shared channel.  Otherwise the ACK
    falls through to RX2 on the dedicated sub-band, where transmission
    (once possible) is always received.
    """
    s_int_ack1 = _vec(s_int_ack1)
    s_sb1 = sb1.p_on * sb1.p_t * s_int_ack1
    fallthrough = sb1.p_off + sb1.p_on * (1.0 - sb1.p_t)
    s_sb2 = fallthrough * sb2.p_on * sb2.p_t
    s_dl = s_sb1 + s_sb2
    if np.any(s_dl > 1.0 + 1e-9):
        raise ModelError(
            f"downlink success probability exceeded 1 (max {float(s_dl.max())!r}); "
            "broken iterate"
        )
    return s_sb1, float(s_sb2), s_dl


_CHECKED_QUANTITIES = ("r_phy", "s_int", "s_tx", "s_ul", "s_int_ack1", "s_dl")


def iterate(cfg: ScenarioConfig, s_ul, s_dl) -> SteadyState:
    """One full update sweep of the fixed-point system.

    Recomputes, in order: attempt distributions, PHY rates, demodulator
    chain, sub-band states, interference/TX survivals, the new uplink
    success, ACK interference, and the new downlink success.  The
    sub-band states are driven by the incoming ``s_ul`` iterate.
    """
    p_ul, p_dl = attempt_distributions(s_ul, s_dl, cfg.m)
    rates = phy_rates(cfg, p_dl)
    demod = demod_chain(cfg, rates)
    sb1, sb2 = subband_states(cfg, rates, s_ul)
    s_int = interference_survival(cfg.airtimes.t_data, rates.r_phy, cfg.w_gw)
    f_tx1, f_tx2, s_tx = gw_tx_survival(cfg, sb1, sb2)
    new_ul = s_int * s_tx * demod.s_demod
    s_int_ack1 = ack_interference_survival(cfg, rates)
    s_sb1, s_sb2, new_dl = dl_success(cfg, sb1, sb2, s_int_ack1)

    for name, value in zip(_CHECKED_QUANTITIES,
                           (rates.r_phy, s_int, s_tx, new_ul, s_int_ack1, new_dl)):
        if not np.all(np.isfinite(value)):
            raise ModelError(f"non-finite value in {name}")

    return SteadyState(
        s_ul=new_ul, s_dl=new_dl, s_int=s_int, s_tx=s_tx,
        f_tx1=f_tx1, f_tx2=f_tx2, s_int_ack1=s_int_ack1,
        s_sb1=s_sb1, s_sb2=s_sb2, rates=rates, sb1=sb1, sb2=sb2, demod=demod,
        iterations=1, residual=math.inf, converged=False,
    )


def solve(cfg: ScenarioConfig, tol: float = 1e-10, max_iter: int = 1000,
          relaxation: float = 1.0) -> SteadyState:
    """Solve the fixed point by iteration from the all-ones starting point.

    Stops when the sup-norm change of (s_ul, s_dl) between sweeps falls
    below ``tol``.  If ``max_iter`` sweeps are exhausted first, the best
    iterate is returned with ``converged`` False.  ``relaxation`` < 1
    damps the update (an escape hatch for pathological parameter sets;
    with damping the stored intermediate quantities satisfy the update
    identities only approximately).
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if not 0.0 < relaxation <= 1.0:
        raise ValueError(f"relaxation must be in (0, 1], got {relaxation}")

    s_ul = np.ones(N_SF)
    s_dl = np.ones(N_SF)
    state = None
    residual = math.inf
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        state = iterate(cfg, s_ul, s_dl)
        new_ul, new_dl = state.s_ul, state.s_dl
        if relaxation < 1.0:
            new_ul = relaxation * new_ul + (1.0 - relaxation) * s_ul
            new_dl = relaxation * new_dl + (1.0 - relaxation) * s_dl
        residual = max(float(np.max(np.abs(new_ul - s_ul))),
                       float(np.max(np.abs(new_dl - s_dl))))
        s_ul, s_dl = new_ul, new_dl
        if residual <= tol:
            converged = True
            break

    if relaxation < 1.0:
        # Report the damped iterate as the solution vectors.
        return dataclasses.replace(state, s_ul=s_ul, s_dl=s_dl,
                                   iterations=iterations, residual=residual,
                                   converged=converged)
    return dataclasses.replace(state, iterations=iterations, residual=residual,
                               converged=converged)
