"""Client-local exposure detection: distance estimation, matching against the
published infection list, risk scoring, and threshold classification.

Everything here is a pure function of device-local data plus the downloaded
list; nothing in this module performs I/O or emits data off-device.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

from .contact_store import ContactEvent
from .ids import ConfigurationError


@dataclass(frozen=True)
class DistanceModel:
    """Log-distance path loss inversion: RSSI in dBm to meters."""

    tx_power_dbm: float  # received power at 1 m
    path_loss_exponent: float

    def __post_init__(self):
        if self.path_loss_exponent <= 0:
            raise ValueError("path loss exponent must be positive")


def estimate_distance(rssi_dbm: float, model: DistanceModel) -> float:
    """Estimated distance in meters; monotone decreasing in RSSI."""
    return 10.0 ** ((model.tx_power_dbm - rssi_dbm) / (10.0 * model.path_loss_exponent))


@dataclass(frozen=True)
class Match:
    contact_event: ContactEvent
    matched_niid: bytes


class ExposureLevel(str, Enum):
    NONE = "None"
    EXPOSED = "Exposed"


@dataclass
class ExposureReport:
    matches: list
    risk_score: float
    level: ExposureLevel
    thresholds_used: list
    crossed: list = field(default_factory=list)


def match_events(foreign_events, niid_list, revocation_list) -> list:
    """Contact events whose foreign identifier is on the published list.

    Revocations are applied first: a revoked identifier never matches, and
    clients drop previously held matches for it on the next pass.
    """
    revoked = set(revocation_list)
    active = set(niid_list) - revoked
    return [
        Match(contact_event=ev, matched_niid=ev.foreign_tempid)
        for ev in foreign_events
        if ev.foreign_tempid in active
    ]


def default_kernel(distance_m: float) -> float:
    """Distance weighting: full weight inside 2 m, inverse-square beyond."""
    if distance_m <= 2.0:
        return 1.0
    return (2.0 / distance_m) ** 2


def mean_event_distance(event: ContactEvent, model: DistanceModel) -> float:
    """Distance from the mean RSSI of the event's signal profile.

    Mean RSSI rather than min/max: robust against single-sample spikes.
    """
    if not event.rssi_profile:
        return math.inf
    return estimate_distance(event.mean_rssi(), model)


def risk_score(matches, model: DistanceModel, kernel=default_kernel) -> float:
    """Sum over matches of duration times the distance kernel.

    Additive in matches; zero iff no match contributes.
    """
    return sum(
        m.contact_event.duration_minutes * kernel(mean_event_distance(m.contact_event, model))
        for m in matches
    )


def classify(score: float, thresholds, matches=None, model: DistanceModel | None = None) -> ExposureReport:
    """Binarize a risk score against the configured thresholds.

    The boundary is inclusive: score == threshold warns (fail safe).
    """
    thresholds = sorted(thresholds)
    if not thresholds:
        raise ConfigurationError("at least one exposure threshold is required")
    crossed = [t for t in thresholds if score >= t]
    level = ExposureLevel.EXPOSED if crossed else ExposureLevel.NONE
    return ExposureReport(
        matches=list(matches or []),
        risk_score=score,
        level=level,
        thresholds_used=thresholds,
        crossed=crossed,
    )


def evaluate(foreign_events, niid_list, revocation_list, model: DistanceModel,
             thresholds, kernel=default_kernel) -> ExposureReport:
    """Full client-side pass: match, score, classify."""
    matches = match_events(foreign_events, niid_list, revocation_list)
    score = risk_score(matches, model, kernel)
    return classify(score, thresholds, matches=matches, model=model)


def report_to_json(report: ExposureReport, model: DistanceModel) -> str:
    """Serialize a report for display.

    Per-match entries carry day, duration, and mean distance only; there is
    no key grouping matches by which infected person produced them, so the
    serialization cannot reconstruct one-long-contact vs many-short-contacts
    beyond what the match list itself states.
    """
    doc = {
        "score": report.risk_score,
        "level": report.level.value,
        "thresholds": report.thresholds_used,
        "match_count": len(report.matches),
        "matches": [
            {
                "day": m.contact_event.day,
                "duration": m.contact_event.duration_minutes,
                "mean_distance": round(mean_event_distance(m.contact_event, model), 3),
            }
            for m in report.matches
        ],
    }
    return json.dumps(doc, sort_keys=True)
