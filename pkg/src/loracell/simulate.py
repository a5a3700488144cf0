"""Event-driven Monte-Carlo simulator of the LoRaWAN cell.

Where the analytic model assumes independent Poisson filters, the
simulator tracks every device and the gateway explicitly: per-device
duty-cycle timers, correlated retransmission timing, a finite demodulator
bank, a half-duplex gateway radio and per-sub-band gateway duty cycling.
It is the validation oracle for the fixed-point model at desk scale.

Two capture models are available.  ``probabilistic`` mirrors the
analytic assumptions exactly: a reception overlapping one same-SF packet
on the same channel survives with the configured capture probability,
and overlapping two or more is always lost.  ``geometric`` places
devices on a disc, applies log-distance path loss and lets a reception
survive if its power exceeds the maximum concurrent sum of same-SF
interferers by the co-channel rejection margin.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .scenario import N_SF, ScenarioConfig, ValidationError

# Event kinds, in no particular priority (ties break on schedule order).
_EV_ARRIVAL = 0
_EV_TX_START = 1
_EV_TX_END = 2
_EV_RX1 = 3
_EV_RX2 = 4
_EV_ACK_END = 5

# Uplink PHY outcomes.
_OUT_DELIVERED = 0
_OUT_INTERFERENCE = 1
_OUT_GWTX = 2
_OUT_NMD = 3

_ARRIVAL_MODELS = ("poisson", "periodic")
_CAPTURE_MODELS = ("probabilistic", "geometric")


class SimulationError(RuntimeError):
    """An internal simulator invariant was violated or a budget exceeded."""


@dataclass(frozen=True)
class SimConfig:
    """Simulation controls wrapped around a scenario."""

    scenario: ScenarioConfig
    n_devices: int = 1200
    arrival_model: str = "poisson"
    capture_model: str = "probabilistic"
    radius_m: float = 2500.0
    path_loss_exponent: float = 3.76
    cr_db: float = 6.0                  # co-channel rejection margin (geometric mode)
    sim_duration: float = 3600.0
    warmup: float | None = None         # None: 10x the longest retransmission period
    seed: int = 1
    n_replications: int = 10
    trace_path: str | None = None       # per-event line trace, disabled by default
    max_events: int = 50_000_000

    def __post_init__(self):
        if self.n_devices < 1:
            raise ValidationError(f"n_devices must be >= 1, got {self.n_devices}")
        if self.n_replications < 1:
            raise ValidationError(f"n_replications must be >= 1, got {self.n_replications}")
        if self.arrival_model not in _ARRIVAL_MODELS:
            raise ValidationError(f"arrival_model must be one of {_ARRIVAL_MODELS}")
        if self.capture_model not in _CAPTURE_MODELS:
            raise ValidationError(f"capture_model must be one of {_CAPTURE_MODELS}")
        if self.radius_m <= 0:
            raise ValidationError("radius_m must be positive")
        if self.sim_duration <= 0:
            raise ValidationError("sim_duration must be positive")
        if self.warmup is not None and not 0 <= self.warmup < self.sim_duration:
            raise ValidationError("need sim_duration > warmup >= 0")

    def resolved_warmup(self) -> float:
        if self.warmup is not None:
            return self.warmup
        sc = self.scenario
        gamma_max = max((sc.delta_sb1 + 1.0) * t + sc.mu_retx for t in sc.airtimes.t_data)
        warmup = 10.0 * gamma_max
        if warmup >= self.sim_duration:
            raise ValidationError(
                f"default warmup ({warmup:.0f} s, ten times the slowest "
                f"retransmission period) does not fit in sim_duration "
                f"{self.sim_duration:.0f} s; pass an explicit warmup")
        return warmup


@dataclass(frozen=True)
class ReplicationResult:
    """Counters and empirical metrics of one replication (post-warmup)."""

    seed: int
    # Application-layer counts per SF.
    offered_app_u: tuple[int, ...]
    offered_app_c: tuple[int, ...]
    delivered_app_u: tuple[int, ...]
    delivered_app_c: tuple[int, ...]
    acked_app_c: tuple[int, ...]
    # PHY-layer counts per SF.
    offered_phy: tuple[int, ...]
    delivered_phy: tuple[int, ...]
    lost_interference: tuple[int, ...]
    lost_gwtx: tuple[int, ...]
    lost_nmd: tuple[int, ...]
    # Downlink tallies.
    dl_sb1_sent: int
    dl_sb2_sent: int
    dl_no_window: int
    dl_rx1_corrupted: int
    # Empirical metrics (None when undefined: no traffic of that kind).
    uu: float | None
    cu: float | None
    cd: float | None
    delta_ul: float | None
    delta_dl: float | None
    jain: float | None
    f_nmd: float | None
    f_gwtx: float | None
    f_int: float | None
    dc_violations: int
    events: int


@dataclass(frozen=True)
class MetricSummary:
    """Mean and 95% confidence half-width of one metric over replications."""

    mean: float | None
    halfwidth: float | None
    values: tuple[float | None, ...]


@dataclass(frozen=True)
class SimReport:
    config: SimConfig
    replications: tuple[ReplicationResult, ...]
    uu: MetricSummary
    cu: MetricSummary
    cd: MetricSummary
    delta_ul: MetricSummary
    delta_dl: MetricSummary
    jain: MetricSummary
    f_nmd: MetricSummary
    f_gwtx: MetricSummary
    f_int: MetricSummary
    # Pooled counts over all replications.
    offered_app: int
    offered_phy: int
    delivered_phy: int
    lost_interference: int
    lost_gwtx: int
    lost_nmd: int
    dl_no_window: int
    dc_violations: int


def place_devices(sim_cfg: SimConfig, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Draw device positions, traffic types and SFs for one replication.

    Positions are uniform on the disc of radius ``radius_m`` around the
    gateway; each device is confirmed with probability alpha and draws
    its SF from the distribution of its traffic type.  Returns
    ``(x, y, confirmed, sf_index)`` arrays.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sc = sim_cfg.scenario
    n = sim_cfg.n_devices
    radius = sim_cfg.radius_m * np.sqrt(rng.uniform(0.0, 1.0, n))
    angle = rng.uniform(0.0, 2.0 * math.pi, n)
    x = radius * np.cos(angle)
    y = radius * np.sin(angle)
    confirmed = rng.random(n) < sc.alpha
    sf_idx = np.empty(n, dtype=np.int64)
    n_conf = int(confirmed.sum())
    if n_conf:
        sf_idx[confirmed] = rng.choice(N_SF, size=n_conf, p=np.asarray(sc.p_confirmed.p))
    if n - n_conf:
        sf_idx[~confirmed] = rng.choice(N_SF, size=n - n_conf, p=np.asarray(sc.p_unconfirmed.p))
    return x, y, confirmed, sf_idx


class _Device:
    __slots__ = ("idx", "confirmed", "sfi", "x", "y", "power", "next_allowed",
                 "queue", "busy", "attempts", "first_attempt", "counted",
                 "delivered_time")

    def __init__(self, idx, confirmed, sfi, x, y, power):
        self.idx = idx
        self.confirmed = confirmed
        self.sfi = sfi
        self.x = x
        self.y = y
        self.power = power          # received power at the gateway (geometric mode)
        self.next_allowed = 0.0     # duty-cycle gate for the next uplink
        self.queue = deque()
        self.busy = False
        self.attempts = 0
        self.first_attempt = 0.0
        self.counted = False
        self.delivered_time = None  # first gateway delivery time of the current packet


class _Tx:
    """One uplink transmission on the air."""

    __slots__ = ("uid", "device", "sfi", "ch", "start", "end", "counted", "fate", "rx")

    def __init__(self, uid, device, sfi, ch, start, end, counted):
        self.uid = uid
        self.device = device
        self.sfi = sfi
        self.ch = ch
        self.start = start
        self.end = end
        self.counted = counted
        self.fate = None            # set when lost at arrival or aborted
        self.rx = None


class _Listen:
    """An ongoing reception collecting same-channel same-SF interferers."""

    __slots__ = ("n_int", "interferers", "power_at", "tx")

    def __init__(self, power_at):
        self.n_int = 0
        self.interferers = []       # (power, start, end), geometric mode only
        self.power_at = power_at    # callable tx -> received interferer power, or None
        self.tx = None              # the gateway-side uplink being received, if any

    def snapshot(self, on_air_txs):
        for tx in on_air_txs:
            self.add(tx)

    def add(self, tx):
        self.n_int += 1
        if self.power_at is not None:
            self.interferers.append((self.power_at(tx), tx.start, tx.end))


def _max_concurrent_power(interferers, start, end) -> float:
    """Peak instantaneous interference power inside the reception window."""
    edges = []
    for power, s, e in interferers:
        s = max(s, start)
        e = min(e, end)
        if e > s:
            edges.append((s, power))
            edges.append((e, -power))
    if not edges:
        return 0.0
    edges.sort()
    level = 0.0
    peak = 0.0
    for _, delta in edges:
        level += delta
        if level > peak:
            peak = level
    return peak


def _summary(values) -> MetricSummary:
    defined = [v for v in values if v is not None]
    if not defined:
        return MetricSummary(None, None, tuple(values))
    mean = float(np.mean(defined))
    if len(defined) < 2:
        return MetricSummary(mean, None, tuple(values))
    sd = float(np.std(defined, ddof=1))
    half = float(sps.t.ppf(0.975, len(defined) - 1) * sd / math.sqrt(len(defined)))
    return MetricSummary(mean, half, tuple(values))


def _ratio(num, den) -> float | None:
    return None if den == 0 else num / den


class _Replication:
    """One single-threaded event loop; state is local to a replication."""

    def __init__(self, sim_cfg: SimConfig, rng: np.random.Generator, seed_label: int):
        self.cfg = sim_cfg
        self.sc = sim_cfg.scenario
        self.rng = rng
        self.seed_label = seed_label
        self.warmup = sim_cfg.resolved_warmup()
        self.duration = sim_cfg.sim_duration
        self.geometric = sim_cfg.capture_model == "geometric"
        self.margin = 10.0 ** (sim_cfg.cr_db / 10.0)

        sc = self.sc
        self.t_data = sc.airtimes.t_data
        self.t_ack1 = sc.airtimes.t_ack1
        self.t_ack2 = sc.airtimes.t_ack2

        x, y, confirmed, sf_idx = place_devices(sim_cfg, rng)
        dist = np.maximum(np.hypot(x, y), 1.0)
        power = dist ** (-sim_cfg.path_loss_exponent)
        self.devices = [
            _Device(i, bool(confirmed[i]), int(sf_idx[i]), float(x[i]), float(y[i]),
                    float(power[i]))
            for i in range(sim_cfg.n_devices)
        ]

        # Gateway state.
        self.free_demods = sc.n_demodulators
        self.receptions = {}            # tx uid -> _Listen (GW side)
        self.tx_until = 0.0             # gateway radio busy transmitting until
        self.sb1_free_at = 0.0          # duty-cycle gates per sub-band
        self.sb2_free_at = 0.0

        self.on_air = {}                # (ch, sfi) -> {uid: _Tx}
        self.listeners = {}             # (ch, sfi) -> {uid: _Listen}

        self.heap = []
        self.seq = 0
        self.uid = 0
        self.events = 0

        z = np.zeros(N_SF, dtype=np.int64)
        self.offered_app_u = z.copy(); self.offered_app_c = z.copy()
        self.delivered_app_u = z.copy(); self.delivered_app_c = z.copy()
        self.acked_app_c = z.copy()
        self.offered_phy = z.copy(); self.delivered_phy = z.copy()
        self.lost_int = z.copy(); self.lost_gwtx = z.copy(); self.lost_nmd = z.copy()
        self.dl_sb1_sent = 0; self.dl_sb2_sent = 0
        self.dl_no_window = 0; self.dl_rx1_corrupted = 0
        self.ul_delay_sum = 0.0; self.ul_delay_n = 0
        self.dl_delay_sum = 0.0; self.dl_delay_n = 0
        self.dc_violations = 0
        self.trace = None

    # -- event plumbing ----------------------------------------------------

    def schedule(self, time, kind, payload):
        heapq.heappush(self.heap, (time, self.seq, kind, payload))
        self.seq += 1

    def emit(self, time, device_idx, sfi, ch, kind, outcome):
        if self.trace is not None:
            self.trace.write(f"{time:.6f} {device_idx} {sfi + 7} {ch} {kind} {outcome}\n")

    # -- traffic generation ------------------------------------------------

    def first_arrivals(self):
        sc = self.sc
        if sc.lambda_total <= 0.0:
            return
        per_device = sc.lambda_total / self.cfg.n_devices
        if self.cfg.arrival_model == "poisson":
            for dev in self.devices:
                self.schedule(self.rng.exponential(1.0 / per_device), _EV_ARRIVAL, dev)
        else:
            period = 1.0 / per_device
            for dev in self.devices:
                self.schedule(self.rng.uniform(0.0, period), _EV_ARRIVAL, dev)

    def next_arrival(self, dev, now):
        per_device = self.sc.lambda_total / self.cfg.n_devices
        if self.cfg.arrival_model == "poisson":
            self.schedule(now + self.rng.exponential(1.0 / per_device), _EV_ARRIVAL, dev)
        else:
            self.schedule(now + 1.0 / per_device, _EV_ARRIVAL, dev)

    # -- device MAC --------------------------------------------------------

    def start_packet(self, dev, now):
        dev.busy = True
        dev.queue.popleft()
        dev.attempts = 0
        dev.delivered_time = None
        dev.counted = False
        self.schedule(max(now, dev.next_allowed), _EV_TX_START, dev)

    def finish_packet(self, dev, acked, now):
        if dev.counted:
            if dev.confirmed:
                if dev.delivered_time is not None:
                    self.delivered_app_c[dev.sfi] += 1
                    self.ul_delay_sum += dev.delivered_time - dev.first_attempt
                    self.ul_delay_n += 1
                if acked:
                    self.acked_app_c[dev.sfi] += 1
                    self.dl_delay_sum += now - dev.first_attempt
                    self.dl_delay_n += 1
            elif dev.delivered_time is not None:
                self.delivered_app_u[dev.sfi] += 1
        dev.busy = False
        if dev.queue:
            self.start_packet(dev, now)

    def confirmed_attempt_failed(self, dev, ul_end):
        fail_at = ul_end + 2.0  # failure is known when the second window closes
        if dev.attempts < self.sc.m:
            timeout = max(self.rng.uniform(self.sc.mu_retx - 1.0, self.sc.mu_retx + 1.0), 0.0)
            self.schedule(max(fail_at + timeout, dev.next_allowed), _EV_TX_START, dev)
        else:
            self.finish_packet(dev, acked=False, now=fail_at)

    # -- gateway helpers ---------------------------------------------------

    def abort_receptions(self, now):
        """Gateway starts transmitting: every ongoing reception is lost."""
        for uid, listen in list(self.receptions.items()):
            tx = listen.tx
            tx.fate = _OUT_GWTX
            tx.rx = None
            del self.receptions[uid]
            del self.listeners[(tx.ch, tx.sfi)][uid]
            self.free_demods += 1

    def gw_busy_receiving(self) -> bool:
        return bool(self.receptions)

    # -- event handlers ----------------------------------------------------

    def on_arrival(self, now, dev):
        if now >= self.duration:
            return
        self.next_arrival(dev, now)
        dev.queue.append(now)
        if not dev.busy:
            self.start_packet(dev, now)

    def on_tx_start(self, now, dev):
        if now < dev.next_allowed - 1e-9:
            self.dc_violations += 1
        sfi = dev.sfi
        airtime = self.t_data[sfi]
        end = now + airtime
        ch = int(self.rng.integers(self.sc.c_channels))
        dev.attempts += 1
        if dev.attempts == 1:
            dev.first_attempt = now
            dev.counted = self.warmup <= now <= self.duration
            if dev.counted:
                if dev.confirmed:
                    self.offered_app_c[sfi] += 1
                else:
                    self.offered_app_u[sfi] += 1
        counted = self.warmup <= now <= self.duration
        if counted:
            self.offered_phy[sfi] += 1
        dev.next_allowed = end + self.sc.delta_sb1 * airtime

        self.uid += 1
        tx = _Tx(self.uid, dev, sfi, ch, now, end, counted)
        key = (ch, sfi)
        air = self.on_air.setdefault(key, {})
        ears = self.listeners.setdefault(key, {})
        for listen in ears.values():
            listen.add(tx)

        if now < self.tx_until:
            tx.fate = _OUT_GWTX          # gateway radio is transmitting
        elif self.free_demods == 0:
            tx.fate = _OUT_NMD           # all demodulators locked
        else:
            self.free_demods -= 1
            listen = _Listen(self._gw_power_fn() if self.geometric else None)
            listen.snapshot(air.values())
            listen.tx = tx
            tx.rx = listen
            self.receptions[tx.uid] = listen
            ears[tx.uid] = listen
        air[tx.uid] = tx
        self.schedule(end, _EV_TX_END, tx)
        self.emit(now, dev.idx, sfi, ch, "ul_start", "")

    def _gw_power_fn(self):
        return lambda tx: tx.device.power

    def on_tx_end(self, now, tx):
        key = (tx.ch, tx.sfi)
        del self.on_air[key][tx.uid]
        dev = tx.device
        if tx.rx is not None:
            listen = tx.rx
            del self.receptions[tx.uid]
            del self.listeners[key][tx.uid]
            self.free_demods += 1
            outcome = self.resolve_uplink(listen, tx)
        else:
            outcome = tx.fate
        if tx.counted:
            if outcome == _OUT_DELIVERED:
                self.delivered_phy[tx.sfi] += 1
            elif outcome == _OUT_INTERFERENCE:
                self.lost_int[tx.sfi] += 1
            elif outcome == _OUT_GWTX:
                self.lost_gwtx[tx.sfi] += 1
            else:
                self.lost_nmd[tx.sfi] += 1
        self.emit(now, dev.idx, tx.sfi, tx.ch, "ul_end",
                  ("delivered", "interference", "gw_tx", "no_demod")[outcome])

        delivered = outcome == _OUT_DELIVERED
        if delivered and dev.delivered_time is None:
            dev.delivered_time = now
        if dev.confirmed:
            if delivered:
                self.schedule(now + 1.0, _EV_RX1, (dev, tx.sfi, tx.ch, now))
            else:
                self.confirmed_attempt_failed(dev, now)
        else:
            if dev.attempts < self.sc.h:
                # Next copy after both receive windows, duty cycle allowing.
                self.schedule(max(now + 2.0, dev.next_allowed), _EV_TX_START, dev)
            else:
                self.finish_packet(dev, acked=False, now=now + 2.0)

    def resolve_uplink(self, listen, tx) -> int:
        if self.geometric:
            peak = _max_concurrent_power(listen.interferers, tx.start, tx.end)
            ok = peak == 0.0 or tx.device.power >= self.margin * peak
            return _OUT_DELIVERED if ok else _OUT_INTERFERENCE
        if listen.n_int == 0:
            return _OUT_DELIVERED
        if listen.n_int == 1 and self.rng.random() < self.sc.w_gw:
            return _OUT_DELIVERED
        return _OUT_INTERFERENCE

    def on_rx1(self, now, ctx):
        dev, sfi, ch, ul_end = ctx
        blocked = (
            now < self.tx_until
            or now < self.sb1_free_at
            or (self.sc.tau1 == 0 and self.gw_busy_receiving())
        )
        if blocked:
            self.schedule(ul_end + 2.0, _EV_RX2, ctx)
            return
        airtime = self.t_ack1[sfi]
        if self.sc.tau1 == 1:
            self.abort_receptions(now)
        if self.gw_busy_receiving():
            raise SimulationError("gateway would transmit while receiving")
        self.tx_until = now + airtime
        self.sb1_free_at = now + airtime * (1.0 + self.sc.delta_sb1)
        if dev.counted:
            self.dl_sb1_sent += 1
        key = (ch, sfi)
        listen = _Listen((lambda t: self._ed_power(t, dev)) if self.geometric else None)
        listen.snapshot(self.on_air.setdefault(key, {}).values())
        self.uid += 1
        ears = self.listeners.setdefault(key, {})
        ears[self.uid] = listen
        self.schedule(now + airtime, _EV_ACK_END,
                      (dev, sfi, ch, ul_end, 1, listen, self.uid, now))
        self.emit(now, dev.idx, sfi, ch, "ack1_start", "")

    def _ed_power(self, tx, dev):
        dist = max(math.hypot(tx.device.x - dev.x, tx.device.y - dev.y), 1.0)
        return dist ** (-self.cfg.path_loss_exponent)

    def on_rx2(self, now, ctx):
        dev, sfi, ch, ul_end = ctx
        blocked = (
            now < self.tx_until
            or now < self.sb2_free_at
            or (self.sc.tau2 == 0 and self.gw_busy_receiving())
        )
        if blocked:
            if dev.counted:
                self.dl_no_window += 1
            self.emit(now, dev.idx, sfi, ch, "ack_dropped", "no_window")
            self.confirmed_attempt_failed(dev, ul_end)
            return
        airtime = self.t_ack2[sfi]
        if self.sc.tau2 == 1:
            self.abort_receptions(now)
        if self.gw_busy_receiving():
            raise SimulationError("gateway would transmit while receiving")
        self.tx_until = now + airtime
        self.sb2_free_at = now + airtime * (1.0 + self.sc.delta_sb2)
        if dev.counted:
            self.dl_sb2_sent += 1
        self.schedule(now + airtime, _EV_ACK_END,
                      (dev, sfi, ch, ul_end, 2, None, None, now))
        self.emit(now, dev.idx, sfi, ch, "ack2_start", "")

    def on_ack_end(self, now, ctx):
        dev, sfi, ch, ul_end, window, listen, listen_uid, start = ctx
        if window == 1:
            del self.listeners[(ch, sfi)][listen_uid]
            if self.geometric:
                peak = _max_concurrent_power(listen.interferers, start, now)
                ok = peak == 0.0 or dev.power >= self.margin * peak
            elif listen.n_int == 0:
                ok = True
            elif listen.n_int == 1:
                ok = self.rng.random() < self.sc.w_ed
            else:
                ok = False
            if not ok:
                if dev.counted:
                    self.dl_rx1_corrupted += 1
                self.emit(now, dev.idx, sfi, ch, "ack1_end", "corrupted")
                self.confirmed_attempt_failed(dev, ul_end)
                return
        self.emit(now, dev.idx, sfi, ch, f"ack{window}_end", "received")
        self.finish_packet(dev, acked=True, now=now)

    # -- main loop ----------------------------------------------------------

    def run(self) -> ReplicationResult:
        handlers = {
            _EV_ARRIVAL: self.on_arrival,
            _EV_TX_START: self.on_tx_start,
            _EV_TX_END: self.on_tx_end,
            _EV_RX1: self.on_rx1,
            _EV_RX2: self.on_rx2,
            _EV_ACK_END: self.on_ack_end,
        }
        if self.cfg.trace_path is not None:
            self.trace = open(self.cfg.trace_path, "a")
        try:
            self.first_arrivals()
            heap = self.heap
            while heap:
                now, _, kind, payload = heapq.heappop(heap)
                self.events += 1
                if self.events > self.cfg.max_events:
                    raise SimulationError(
                        f"event budget exceeded ({self.cfg.max_events} events)"
                    )
                handlers[kind](now, payload)
        finally:
            if self.trace is not None:
                self.trace.close()
                self.trace = None
        return self.result()

    # -- reporting -----------------------------------------------------------

    def result(self) -> ReplicationResult:
        def ints(arr):
            return tuple(int(v) for v in arr)

        off_u = int(self.offered_app_u.sum())
        off_c = int(self.offered_app_c.sum())
        off_phy = int(self.offered_phy.sum())
        jain = self._jain()
        return ReplicationResult(
            seed=self.seed_label,
            offered_app_u=ints(self.offered_app_u),
            offered_app_c=ints(self.offered_app_c),
            delivered_app_u=ints(self.delivered_app_u),
            delivered_app_c=ints(self.delivered_app_c),
            acked_app_c=ints(self.acked_app_c),
            offered_phy=ints(self.offered_phy),
            delivered_phy=ints(self.delivered_phy),
            lost_interference=ints(self.lost_int),
            lost_gwtx=ints(self.lost_gwtx),
            lost_nmd=ints(self.lost_nmd),
            dl_sb1_sent=self.dl_sb1_sent,
            dl_sb2_sent=self.dl_sb2_sent,
            dl_no_window=self.dl_no_window,
            dl_rx1_corrupted=self.dl_rx1_corrupted,
            uu=_ratio(int(self.delivered_app_u.sum()), off_u),
            cu=_ratio(int(self.delivered_app_c.sum()), off_c),
            cd=_ratio(int(self.acked_app_c.sum()), off_c),
            delta_ul=_ratio(self.ul_delay_sum, self.ul_delay_n),
            delta_dl=_ratio(self.dl_delay_sum, self.dl_delay_n),
            jain=jain,
            f_nmd=_ratio(int(self.lost_nmd.sum()), off_phy),
            f_gwtx=_ratio(int(self.lost_gwtx.sum()), off_phy),
            f_int=_ratio(int(self.lost_int.sum()), off_phy),
            dc_violations=self.dc_violations,
            events=self.events,
        )

    def _jain(self) -> float | None:
        shares = []
        for i in range(N_SF):
            if self.offered_app_u[i] > 0:
                shares.append(self.delivered_app_u[i] / self.offered_app_u[i])
        for i in range(N_SF):
            if self.offered_app_c[i] > 0:
                shares.append(self.delivered_app_c[i] / self.offered_app_c[i])
        if not shares:
            return None
        x = np.asarray(shares)
        denom = float(np.sum(x * x))
        if denom == 0.0:
            return None
        return float(x.sum() ** 2 / (len(x) * denom))


def _run_one(args) -> ReplicationResult:
    sim_cfg, r = args
    rng = np.random.default_rng(np.random.SeedSequence(entropy=sim_cfg.seed,
                                                       spawn_key=(r,)))
    return _Replication(sim_cfg, rng, seed_label=r).run()


def run(sim_cfg: SimConfig, workers: int = 1) -> SimReport:
    """Run all replications and aggregate them into a report.

    Each replication draws fresh positions, SF assignments and traffic
    from its own deterministic stream, so the same ``seed`` always
    produces a bit-identical report; with ``workers`` > 1 replications
    run in a process pool and are merged in replication order.
    """
    jobs = [(sim_cfg, r) for r in range(sim_cfg.n_replications)]
    if workers > 1 and sim_cfg.trace_path is None:
        # Tracing appends to one file, so it stays on the serial path.
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(_run_one, jobs))
    else:
        reps = [_run_one(job) for job in jobs]

    def col(name):
        return _summary([getattr(rep, name) for rep in reps])

    return SimReport(
        config=sim_cfg,
        replications=tuple(reps),
        uu=col("uu"), cu=col("cu"), cd=col("cd"),
        delta_ul=col("delta_ul"), delta_dl=col("delta_dl"), jain=col("jain"),
        f_nmd=col("f_nmd"), f_gwtx=col("f_gwtx"), f_int=col("f_int"),
        offered_app=sum(sum(r.offered_app_u) + sum(r.offered_app_c) for r in reps),
        offered_phy=sum(sum(r.offered_phy) for r in reps),
        delivered_phy=sum(sum(r.delivered_phy) for r in reps),
        lost_interference=sum(sum(r.lost_interference) for r in reps),
        lost_gwtx=sum(sum(r.lost_gwtx) for r in reps),
        lost_nmd=sum(sum(r.lost_nmd) for r in reps),
        dl_no_window=sum(r.dl_no_window for r in reps),
        dc_violations=sum(r.dc_violations for r in reps),
    )


def loss_breakdown(report: SimReport) -> tuple[float, float, float]:
    """Pooled empirical PHY loss fractions (no-demodulator, gateway-TX, interference)."""
    offered = report.offered_phy
    if offered == 0:
        return 0.0, 0.0, 0.0
    return (report.lost_nmd / offered,
            report.lost_gwtx / offered,
            report.lost_interference / offered)
