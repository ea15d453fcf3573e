"""Deterministic agent-based simulation of the full protocol loop.

Mobility is epoch-aligned waypoint dwelling: agents relocate only at
rotation-epoch boundaries, so geometry (and therefore RSSI) is piecewise
constant per epoch.  That makes beacon exchange batched per epoch exactly
equivalent to per-minute sampling, keeps long runs fast, and guarantees
that any contiguous close-proximity span is a whole number of epochs.

Everything is driven by one seeded ``random.Random``; identical (seed,
config) pairs produce byte-identical event logs and reports.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np

from . import contact_store, exposure, server as server_mod, tan, wire
from .ids import TempIdGenerator, schedule_for_day

NOON_MINUTE = 720


class InfectionState(Enum):
    SUSCEPTIBLE = "Susceptible"
    EXPOSED = "Exposed"
    INFECTIOUS = "Infectious"
    DIAGNOSED = "Diagnosed"
    RECOVERED = "Recovered"


_STATE_ORDER = [
    InfectionState.SUSCEPTIBLE,
    InfectionState.EXPOSED,
    InfectionState.INFECTIOUS,
    InfectionState.DIAGNOSED,
    InfectionState.RECOVERED,
]


class PostDiagnosisPolicy(str, Enum):
    KEEP_RUNNING = "KeepRunning"
    UNINSTALL = "Uninstall"
    LEAVE_PHONE_HOME = "LeavePhoneHome"


@dataclass
class WorldConfig:
    n_agents: int = 50
    adoption_rate: float = 0.6
    interval_minutes: int = 15
    retention_days: int = 14
    window_days: int = 14
    tx_power_dbm: float = -65.0
    path_loss_exponent: float = 3.0
    wall_attenuation_db: float = 15.0
    receiver_sensitivity_dbm: float = -90.0
    infectious_radius_m: float = 2.0
    infection_prob_per_minute: float = 0.005
    incubation_days: int = 2
    infectious_days: int = 8
    sample_delay_days: int = 1
    test_delay_days: int = 2
    sim_days: int = 14
    rng_seed: int = 0
    arena_size_m: float = 120.0
    move_prob: float = 0.5
    seed_infectious: int = 1
    qualifying_minutes: int = 15
    thresholds: tuple = (15.0,)
    policy_after_diagnosis: str = "KeepRunning"
    tan_call_window_minutes: int = 15
    wall_pairs: tuple = ()  # pairs of agent ids separated by one wall
    fixed_positions: dict = field(default_factory=dict)  # agent id -> (x, y)
    scripted_revocations: tuple = ()  # (day, agent id)
    log_level: str = "summary"  # "full" adds per-epoch beacon spans

    def validate(self):
        if not 0.0 <= self.adoption_rate <= 1.0:
            raise ValueError("adoption_rate must be in [0, 1]")
        for name in ("path_loss_exponent", "infectious_radius_m", "arena_size_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sim_days < 1 or self.n_agents < 1:
            raise ValueError("need at least one day and one agent")
        schedule_for_day(self.interval_minutes)

    @classmethod
    def from_json(cls, text: str) -> "WorldConfig":
        raw = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "thresholds" in raw:
            raw["thresholds"] = tuple(raw["thresholds"])
        if "wall_pairs" in raw:
            raw["wall_pairs"] = tuple(tuple(p) for p in raw["wall_pairs"])
        if "scripted_revocations" in raw:
            raw["scripted_revocations"] = tuple(tuple(p) for p in raw["scripted_revocations"])
        if "fixed_positions" in raw:
            raw["fixed_positions"] = {int(k): tuple(v) for k, v in raw["fixed_positions"].items()}
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        doc = asdict(self)
        doc["fixed_positions"] = {str(k): list(v) for k, v in self.fixed_positions.items()}
        return json.dumps(doc, sort_keys=True)


def radio_rssi(distance_m: float, walls_crossed: int, config: WorldConfig) -> float:
    """Log-distance path loss with per-wall attenuation."""
    d = max(distance_m, 0.1)
    return (
        config.tx_power_dbm
        - 10.0 * config.path_loss_exponent * math.log10(d)
        - walls_crossed * config.wall_attenuation_db
    )


def max_clear_range(config: WorldConfig) -> float:
    """Distance at which an unobstructed link hits receiver sensitivity."""
    margin = config.tx_power_dbm - config.receiver_sensitivity_dbm
    return 10.0 ** (margin / (10.0 * config.path_loss_exponent))


class SimAgent:
    __slots__ = (
        "id", "pos", "has_app", "policy", "state", "exposed_day", "infectious_day",
        "diagnosed_day", "recovered_day", "generator", "ledger", "store",
        "current_token", "radio_on", "app_installed", "credentials", "level",
        "first_notified_day", "uploads",
    )

    def __init__(self, agent_id: int, pos, has_app: bool, policy: PostDiagnosisPolicy, rng: random.Random):
        self.id = agent_id
        self.pos = pos
        self.has_app = has_app
        self.policy = policy
        self.state = InfectionState.SUSCEPTIBLE
        self.exposed_day = None
        self.infectious_day = None
        self.diagnosed_day = None
        self.recovered_day = None
        self.generator = TempIdGenerator(rng.randbytes)
        self.ledger = contact_store.OwnIdLedger(rng=rng)
        self.store = contact_store.ForeignStore()
        self.current_token = None
        self.radio_on = has_app
        self.app_installed = has_app
        self.credentials = []
        self.level = exposure.ExposureLevel.NONE
        self.first_notified_day = None
        self.uploads = []  # minutes at which an upload was accepted

    def advance_state(self, new_state: InfectionState):
        if _STATE_ORDER.index(new_state) < _STATE_ORDER.index(self.state):
            raise RuntimeError(f"illegal infection transition {self.state} -> {new_state}")
        self.state = new_state

    def contagious(self, day: int, config: WorldConfig) -> bool:
        if self.infectious_day is None or self.recovered_day is not None:
            return False
        return self.infectious_day <= day < self.infectious_day + config.infectious_days


@dataclass
class SimReport:
    tpr: float
    fpr: float
    n_qualifying_contacts: int
    n_detected_contacts: int
    n_true_exposed: int
    n_notified: int
    n_false_positive: int
    n_missed_valid_contacts: int
    detection_latency_histogram: dict
    n_agents: int
    n_app_agents: int
    sim_days: int
    policy: str
    server_stats: dict
    config_json: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class _SpanTracker:
    """Merges per-epoch proximity observations into maximal contiguous spans."""

    def __init__(self, sink):
        self.open = {}  # (i, j) -> dict span
        self.sink = sink

    def update(self, t0: int, dt: int, active: dict):
        """``active``: (i, j) -> attribute tuple for pairs currently in
        proximity; a span closes when the pair leaves or attributes change."""
        for key, span in list(self.open.items()):
            attrs = active.get(key)
            if attrs != span["attrs"] or span["t0"] + span["mins"] != t0:
                self.sink(key, span)
                del self.open[key]
        for key, attrs in active.items():
            span = self.open.get(key)
            if span is None:
                self.open[key] = {"t0": t0, "mins": dt, "attrs": attrs}
            else:
                span["mins"] += dt

    def flush(self):
        for key, span in self.open.items():
            self.sink(key, span)
        self.open.clear()


class World:
    """One simulation run. Use :func:`run` unless stepping manually."""

    def __init__(self, config: WorldConfig, server=None):
        config.validate()
        self.config = config
        self.rng = random.Random(config.rng_seed)
        self.schedule = schedule_for_day(config.interval_minutes)
        self.model = exposure.DistanceModel(
            tx_power_dbm=config.tx_power_dbm,
            path_loss_exponent=config.path_loss_exponent,
        )
        self.registry = tan.TanRegistry()
        self.server = server if server is not None else server_mod.TraceServer(
            registry=self.registry, retention_days=config.retention_days
        )
        self.server.registry = self.registry
        self.log_lines = []
        self.walls = {tuple(sorted(p)) for p in config.wall_pairs}
        policy = PostDiagnosisPolicy(config.policy_after_diagnosis)
        self.agents = []
        for i in range(config.n_agents):
            if i in config.fixed_positions:
                pos = tuple(config.fixed_positions[i])
            else:
                pos = (
                    self.rng.uniform(0, config.arena_size_m),
                    self.rng.uniform(0, config.arena_size_m),
                )
            has_app = self.rng.random() < config.adoption_rate
            self.agents.append(SimAgent(i, pos, has_app, policy, self.rng))
        for i in range(min(config.seed_infectious, config.n_agents)):
            ag = self.agents[i]
            ag.advance_state(InfectionState.INFECTIOUS)
            ag.infectious_day = 0
        # ground truth bookkeeping
        self.coloc_spans = []  # closed proximity spans with contagion attrs
        self._tracker = _SpanTracker(self._close_span)
        self.notifications = []  # (day, agent)
        self.cleared = []  # (day, agent)
        self._positions = np.array([a.pos for a in self.agents], dtype=float).reshape(config.n_agents, 2)
        self._pair_index = np.triu_indices(config.n_agents, 1)
        self._log({"ev": "config", "config": json.loads(config.to_json())})

    # -- logging ---------------------------------------------------------

    def _log(self, record: dict):
        self.log_lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))

    def _close_span(self, key, span):
        i, j = key
        rec = {
            "ev": "coloc", "i": i, "j": j, "t0": span["t0"], "mins": span["mins"],
            "walls": span["attrs"][0], "ci": span["attrs"][1], "cj": span["attrs"][2],
            "d": span["attrs"][3],
        }
        self.coloc_spans.append(rec)
        self._log(rec)

    # -- physics ---------------------------------------------------------

    def walls_between(self, i: int, j: int) -> int:
        return 1 if (min(i, j), max(i, j)) in self.walls else 0

    def _move(self):
        cfg = self.config
        for ag in self.agents:
            if ag.id in cfg.fixed_positions:
                continue
            if self.rng.random() < cfg.move_prob:
                ag.pos = (
                    self.rng.uniform(0, cfg.arena_size_m),
                    self.rng.uniform(0, cfg.arena_size_m),
                )
                self._positions[ag.id, 0] = ag.pos[0]
                self._positions[ag.id, 1] = ag.pos[1]

    def _rotate(self, day: int, epoch: int):
        for ag in self.agents:
            if not (ag.app_installed and ag.radio_on):
                ag.current_token = None
                continue
            tid = ag.generator.generate(day, epoch)
            contact_store.record_own(ag.ledger, tid, day, epoch)
            ag.current_token = wire.encode_token(tid)

    def _pairs_in_range(self, limit: float):
        if len(self.agents) < 2:
            return []
        p = self._positions
        ii, jj = self._pair_index
        dx = p[ii, 0] - p[jj, 0]
        dy = p[ii, 1] - p[jj, 1]
        d2 = dx * dx + dy * dy
        mask = d2 <= limit * limit
        dist = np.sqrt(d2[mask])
        return list(zip(ii[mask].tolist(), jj[mask].tolist(), dist.tolist()))

    # -- one rotation epoch ---------------------------------------------

    def _run_epoch(self, day: int, epoch: int, t0: int, dt: int):
        cfg = self.config
        self._move()
        self._rotate(day, epoch)

        limit = max(max_clear_range(cfg), cfg.infectious_radius_m)
        pairs = self._pairs_in_range(limit)

        # beacon exchange
        n_links = 0
        for i, j, dist in pairs:
            ai, aj = self.agents[i], self.agents[j]
            walls = self.walls_between(i, j)
            rssi = radio_rssi(dist, walls, cfg)
            if rssi < cfg.receiver_sensitivity_dbm:
                continue
            exchanged = False
            if aj.app_installed and aj.radio_on and ai.current_token is not None:
                contact_store.observe_span(aj.store, ai.current_token, rssi, t0, dt)
                exchanged = True
            if ai.app_installed and ai.radio_on and aj.current_token is not None:
                contact_store.observe_span(ai.store, aj.current_token, rssi, t0, dt)
                exchanged = True
            if exchanged:
                n_links += 1
                if cfg.log_level == "full":
                    self._log({"ev": "beacon_span", "t0": t0, "i": i, "j": j,
                               "mins": dt, "rssi": round(rssi, 3)})

        # ground-truth proximity and infection dynamics
        active = {}
        p_epoch = 1.0 - (1.0 - cfg.infection_prob_per_minute) ** dt
        for i, j, dist in pairs:
            if dist > cfg.infectious_radius_m:
                continue
            ai, aj = self.agents[i], self.agents[j]
            walls = self.walls_between(i, j)
            ci = ai.contagious(day, cfg)
            cj = aj.contagious(day, cfg)
            active[(i, j)] = (walls, ci, cj, round(dist, 3))
            if walls:
                continue  # a wall blocks droplets as well as most of the signal
            for src, dst in ((ai, aj), (aj, ai)):
                if src.contagious(day, cfg) and dst.state is InfectionState.SUSCEPTIBLE:
                    if self.rng.random() < p_epoch:
                        dst.advance_state(InfectionState.EXPOSED)
                        dst.exposed_day = day
                        self._log({"ev": "infect", "t": t0, "agent": dst.id, "source": src.id})
        self._tracker.update(t0, dt, active)
        if cfg.log_level == "full":
            self._log({"ev": "radio", "t": t0, "links": n_links})

    # -- daily protocol work ---------------------------------------------

    def _daily_transitions(self, day: int):
        cfg = self.config
        for ag in self.agents:
            if ag.state is InfectionState.EXPOSED and day >= ag.exposed_day + cfg.incubation_days:
                ag.advance_state(InfectionState.INFECTIOUS)
                ag.infectious_day = day
                self._log({"ev": "state", "day": day, "agent": ag.id, "state": "Infectious"})
            if ag.infectious_day is not None and ag.recovered_day is None:
                if day >= ag.infectious_day + cfg.infectious_days:
                    ag.advance_state(InfectionState.RECOVERED)
                    ag.recovered_day = day
                    self._log({"ev": "state", "day": day, "agent": ag.id, "state": "Recovered"})

    def _sync_clients(self, day: int):
        cfg = self.config
        niids, revoked = self.server.publish_delta(0)
        niid_set = set(niids)
        revoked_set = set(revoked)
        for ag in self.agents:
            if not (ag.app_installed and ag.has_app):
                continue
            if ag.policy is PostDiagnosisPolicy.LEAVE_PHONE_HOME and not ag.radio_on:
                continue
            report = exposure.evaluate(
                contact_store.all_events(ag.store), niid_set, revoked_set,
                self.model, cfg.thresholds,
            )
            if report.level is not ag.level:
                self._log({
                    "ev": "sync", "day": day, "agent": ag.id,
                    "level": report.level.value, "score": round(report.risk_score, 6),
                    "matches": len(report.matches),
                })
                if report.level is exposure.ExposureLevel.EXPOSED:
                    self.notifications.append((day, ag.id))
                    if ag.first_notified_day is None:
                        ag.first_notified_day = day
                    self._log({"ev": "notify", "day": day, "agent": ag.id,
                               "score": round(report.risk_score, 6)})
                else:
                    self.cleared.append((day, ag.id))
                    self._log({"ev": "cleared", "day": day, "agent": ag.id})
            ag.level = report.level

    def _purge_clients(self, day: int):
        removed = 0
        for ag in self.agents:
            if not ag.app_installed:
                continue
            before = len(ag.ledger.entries) + len(contact_store.all_events(ag.store))
            contact_store.purge_expired(ag.ledger, day, self.config.retention_days)
            contact_store.purge_expired(ag.store, day, self.config.retention_days)
            removed += before - (len(ag.ledger.entries) + len(contact_store.all_events(ag.store)))
        self._log({"ev": "purge", "day": day, "removed": removed})

    def _upload_for(self, ag: SimAgent, now: int):
        """Full TAN-gated upload: issue, hand over, release, consume."""
        cfg = self.config
        rec = tan.issue_batch(self.registry, 1, entropy=self.rng.randrange)[0]
        tan.hand_over_half_a(rec)
        tan.release_half_b(rec, now, cfg.tan_call_window_minutes, lab_positive=True)
        entries = [
            (day, tid.bytes)
            for tid, day in contact_store.export_health_tempids(ag.ledger, cfg.window_days, now // 1440)
        ]
        body = wire.encode_upload(rec.full_code, entries)
        meta = (f"10.0.0.{ag.id}", now)
        accepted, credential = self.server.accept_upload(body, meta, now)
        tan.deactivate(rec)
        if accepted:
            ag.credentials.append(credential)
            ag.uploads.append(now)
        self._log({"ev": "upload", "t": now, "agent": ag.id, "n_ids": len(entries),
                   "accepted": accepted, "pub_day": now // 1440})
        return accepted

    def _noon_pipeline(self, day: int, now: int):
        """Testing pipeline: sampling, lab result, TAN flow, upload, policy."""
        cfg = self.config
        for ag in self.agents:
            if ag.infectious_day is None or not ag.app_installed:
                continue
            sampled_day = ag.infectious_day + cfg.sample_delay_days
            diagnosis_day = sampled_day + cfg.test_delay_days
            if day == sampled_day:
                self._log({"ev": "tan", "day": day, "agent": ag.id, "step": "half_a"})
            if day == diagnosis_day and ag.state is InfectionState.INFECTIOUS:
                ag.advance_state(InfectionState.DIAGNOSED)
                ag.diagnosed_day = day
                self._log({"ev": "state", "day": day, "agent": ag.id, "state": "Diagnosed"})
                self._upload_for(ag, now)
                if ag.policy is PostDiagnosisPolicy.UNINSTALL:
                    contact_store.wipe_after_match(ag.ledger, ag.store)
                    ag.app_installed = False
                    ag.radio_on = False
                    self._log({"ev": "policy", "day": day, "agent": ag.id, "action": "uninstall"})
                elif ag.policy is PostDiagnosisPolicy.LEAVE_PHONE_HOME:
                    ag.radio_on = False
                    self._log({"ev": "policy", "day": day, "agent": ag.id, "action": "phone_home"})
            elif (
                ag.diagnosed_day is not None
                and day > ag.diagnosed_day
                and ag.policy is PostDiagnosisPolicy.KEEP_RUNNING
                and ag.contagious(day, cfg)
                and ag.app_installed
            ):
                # keep-running policy: continued daily reporting keeps the
                # published history current while still contagious
                self._upload_for(ag, now)

    def _scripted_revocations(self, day: int):
        for rev_day, agent_id in self.config.scripted_revocations:
            if rev_day != day:
                continue
            ag = self.agents[agent_id]
            ok = False
            for cred in ag.credentials:
                ok = self.server.revoke(cred, day) or ok
            self._log({"ev": "revoke", "day": day, "agent": agent_id, "ok": ok})

    # -- main loop --------------------------------------------------------

    def run(self) -> SimReport:
        cfg = self.config
        epochs = self.schedule.epochs_per_day
        dt = cfg.interval_minutes
        for day in range(cfg.sim_days):
            self._daily_transitions(day)
            self.server.make_backup(day)
            self.server.retention_sweep(day)
            self._scripted_revocations(day)
            self._sync_clients(day)
            self._purge_clients(day)
            for epoch in range(epochs):
                t0 = day * 1440 + epoch * dt
                if epoch * dt <= NOON_MINUTE < (epoch + 1) * dt:
                    self._noon_pipeline(day, day * 1440 + NOON_MINUTE)
                self._run_epoch(day, epoch, t0, dt)
        self._tracker.flush()
        report = self._final_report()
        self._log({"ev": "report", "summary": json.loads(report.to_json())})
        return report

    # -- ground truth accounting -----------------------------------------

    def _covered(self, ag: SimAgent, span_t0: int, span_mins: int) -> int | None:
        """Earliest publication day whose upload covers the whole span, or
        None if the span's identifiers never reached the server."""
        cfg = self.config
        span_end = span_t0 + span_mins
        for up_minute in ag.uploads:
            if up_minute >= span_end and span_t0 // 1440 >= up_minute // 1440 - cfg.window_days:
                return up_minute // 1440
        return None

    def qualifying_contacts(self):
        """Ground truth: detectable qualifying contacts and epidemiologically
        valid contacts. A detectable contact demands that the contagious
        party's identifiers for the span were actually published in time for
        the observer to sync on them."""
        cfg = self.config
        detectable = []
        valid = set()  # (observer, contagious agent) epidemiological truth
        for span in self.coloc_spans:
            if span["walls"] or span["mins"] < cfg.qualifying_minutes:
                continue
            for obs_key, src_key in (("i", "j"), ("j", "i")):
                obs = self.agents[span[obs_key]]
                src = self.agents[span[src_key]]
                if not span["c" + src_key]:
                    continue
                valid.add((obs.id, src.id))
                if not (obs.has_app and src.has_app):
                    continue
                pub_day = self._covered(src, span["t0"], span["mins"])
                if pub_day is None or pub_day + 1 > cfg.sim_days - 1:
                    continue
                if not obs.app_installed:
                    continue
                detectable.append({
                    "observer": obs.id, "source": src.id,
                    "t0": span["t0"], "mins": span["mins"], "pub_day": pub_day,
                })
        return detectable, valid

    def _final_report(self) -> SimReport:
        cfg = self.config
        detectable, valid = self.qualifying_contacts()
        notified_days = {}
        for day, agent in self.notifications:
            notified_days.setdefault(agent, []).append(day)
        detected = 0
        latency_hist = {}
        for contact in detectable:
            deadline = contact["pub_day"] + 1
            days = notified_days.get(contact["observer"], [])
            if any(d <= deadline for d in days):
                detected += 1
                first = min(d for d in days if d <= deadline)
                lat = first - contact["t0"] // 1440
                latency_hist[str(lat)] = latency_hist.get(str(lat), 0) + 1
        true_exposed = {obs for obs, _src in valid}
        app_agents = [a for a in self.agents if a.has_app]
        ever_notified = set(notified_days)
        false_pos = ever_notified - true_exposed
        innocent = [a.id for a in app_agents if a.id not in true_exposed]
        missed_valid = sum(
            1 for obs, _src in valid
            if self.agents[obs].has_app and obs not in ever_notified
        )
        return SimReport(
            tpr=(detected / len(detectable)) if detectable else 1.0,
            fpr=(len(false_pos) / len(innocent)) if innocent else 0.0,
            n_qualifying_contacts=len(detectable),
            n_detected_contacts=detected,
            n_true_exposed=len(true_exposed),
            n_notified=len(ever_notified),
            n_false_positive=len(false_pos),
            n_missed_valid_contacts=missed_valid,
            detection_latency_histogram=latency_hist,
            n_agents=cfg.n_agents,
            n_app_agents=len(app_agents),
            sim_days=cfg.sim_days,
            policy=cfg.policy_after_diagnosis,
            server_stats=self.server.publish_statistics(),
            config_json=cfg.to_json(),
        )


def run(config: WorldConfig, server=None):
    """Run one scenario; returns (SimReport, event log lines)."""
    world = World(config, server=server)
    report = world.run()
    return report, world.log_lines
