"""Security level scoring.

``cvss_base`` is the CVSS v2 base equation.  ``aggregate_service_score``
extends single-resource scores to a service built from many resources: the
service score is the worst (maximum) score over every resource the service
transitively utilizes.  The aggregation policy is pluggable.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Iterable, Mapping

from .errors import MissingComponentScore, NoApplicableRules
from .graph import DependencyGraph, Resource
from .records import AssessmentRule, ConfigurationEntry, SecurityLevelReport

ACCESS_VECTOR = {"local": "L", "adjacent": "A", "network": "N"}
ACCESS_COMPLEXITY = {"high": "H", "medium": "M", "low": "L"}
AUTHENTICATION = {"multiple": "M", "single": "S", "none": "N"}
IMPACT = {"none": "N", "partial": "P", "complete": "C"}

_D = Decimal
_AV = {"local": _D("0.395"), "adjacent": _D("0.646"), "network": _D("1.0")}
_AC = {"high": _D("0.35"), "medium": _D("0.61"), "low": _D("0.71")}
_AU = {"multiple": _D("0.45"), "single": _D("0.56"), "none": _D("0.704")}
_IMP = {"none": _D("0"), "partial": _D("0.275"), "complete": _D("0.660")}

# short token -> (field, long-name table)
_TOKENS = {
    "AV": ("access_vector", ACCESS_VECTOR),
    "AC": ("access_complexity", ACCESS_COMPLEXITY),
    "Au": ("authentication", AUTHENTICATION),
    "C": ("conf_impact", IMPACT),
    "I": ("integ_impact", IMPACT),
    "A": ("avail_impact", IMPACT),
}

METHODS = ("cvss2_base", "aggregate_max")


@dataclass(frozen=True)
class ScoreVector:
    access_vector: str
    access_complexity: str
    authentication: str
    conf_impact: str
    integ_impact: str
    avail_impact: str

    def __post_init__(self) -> None:
        for _, (name, table) in _TOKENS.items():
            if getattr(self, name) not in table:
                raise ValueError(f"{name} must be one of {sorted(table)}")

    @classmethod
    def parse(cls, text: str) -> ScoreVector:
        """Parse ``AV:N/AC:L/Au:N/C:C/I:C/A:C`` (parentheses optional)."""
        parts = text.strip().strip("()").split("/")
        values: dict[str, str] = {}
        for part in parts:
            metric, sep, token = part.partition(":")
            if not sep or metric not in _TOKENS:
                raise ValueError(f"bad vector component {part!r}")
            name, table = _TOKENS[metric]
            if name in values:
                raise ValueError(f"{metric} given twice")
            reverse = {v: k for k, v in table.items()}
            if token not in reverse:
                raise ValueError(f"bad value {token!r} for {metric}")
            values[name] = reverse[token]
        missing = [m for m, (name, _) in _TOKENS.items() if name not in values]
        if missing:
            raise ValueError(f"vector lacks {', '.join(missing)}")
        return cls(**values)

    def __str__(self) -> str:
        return "/".join(f"{m}:{table[getattr(self, name)]}" for m, (name, table) in _TOKENS.items())


@dataclass(frozen=True)
class SecurityScore:
    value: float
    method: str = "cvss2_base"

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 10.0:
            raise ValueError(f"score {self.value} outside [0, 10]")
        if self.method not in METHODS:
            raise ValueError(f"unknown scoring method {self.method!r}")
        object.__setattr__(self, "value", round(float(self.value), 1))

    def to_dict(self) -> dict:
        return {"value": self.value, "method": self.method}

    @classmethod
    def from_dict(cls, d: Mapping) -> SecurityScore:
        return cls(d["value"], d["method"])


def _round1(x: Decimal) -> float:
    return float(x.quantize(_D("0.1"), rounding=ROUND_HALF_UP))


def cvss_base(vector: ScoreVector | str) -> SecurityScore:
    if isinstance(vector, str):
        vector = ScoreVector.parse(vector)
    c, i, a = (_IMP[vector.conf_impact], _IMP[vector.integ_impact], _IMP[vector.avail_impact])
    impact = _D("10.41") * (1 - (1 - c) * (1 - i) * (1 - a))
    exploitability = (
        20 * _AV[vector.access_vector] * _AC[vector.access_complexity] * _AU[vector.authentication]
    )
    f_impact = 0 if impact == 0 else _D("1.176")
    base = (_D("0.6") * impact + _D("0.4") * exploitability - _D("1.5")) * f_impact
    return SecurityScore(min(max(_round1(base), 0.0), 10.0), "cvss2_base")


def aggregate_service_score(
    graph: DependencyGraph,
    service: str,
    component_scores: Mapping[str, SecurityScore | float],
    *,
    skip_unscored: bool = False,
    policy: Callable[[Iterable[float]], float] = max,
) -> SecurityScore:
    """Worst-case score of a service over everything it transitively uses."""
    values = []
    missing = []
    for rid in sorted(graph.dependees_closure(service)):
        score = component_scores.get(rid)
        if score is None:
            missing.append(rid)
            continue
        values.append(score.value if isinstance(score, SecurityScore) else float(score))
    if missing and not skip_unscored:
        raise MissingComponentScore(f"no score for {', '.join(missing)}")
    if not values:
        raise MissingComponentScore(f"no component of {service} is scored")
    return SecurityScore(policy(values), "aggregate_max")


def _applies(rule: AssessmentRule, res: Resource) -> bool:
    return res.id in rule.applicability or (res.provider is not None and res.provider in rule.applicability)


def _settings_for(res: Resource, configurations: Iterable[ConfigurationEntry]) -> dict:
    merged: dict = {}
    for conf in configurations:
        if res.id in conf.targets or (res.provider and res.provider in conf.targets):
            merged.update(conf.settings)
    return merged


def assess(
    resources: Iterable[Resource],
    rules: Iterable[AssessmentRule],
    *,
    subject: str,
    issuer: str = "self",
    configurations: Iterable[ConfigurationEntry] = (),
    report_id: str | None = None,
) -> SecurityLevelReport:
    """Apply assessment rules to an organization's resources.

    Produces one evaluation entry per (rule, section) with local and cloud
    resources in separate sections.  A checklist rule scores the fraction of
    ``{"setting", "expected"}`` items met across the section's applicable
    resources; a prose rule cannot be evaluated mechanically and is reported
    with the value ``"manual"``.
    """
    resources = list(resources)
    configurations = list(configurations)
    evaluation = []
    for rule in rules:
        for section in ("local", "cloud"):
            hits = [r for r in resources if r.locus == section and _applies(rule, r)]
            if not hits:
                continue
            if isinstance(rule.body, list):
                checks = [
                    _settings_for(r, configurations).get(item.get("setting")) == item.get("expected")
                    for r in hits
                    for item in rule.body
                    if isinstance(item, dict)
                ]
                value = round(sum(checks) / len(checks), 4) if checks else "manual"
            else:
                value = "manual"
            evaluation.append({"metric": rule.id, "value": value, "section": section})
    if not evaluation:
        raise NoApplicableRules(f"no rule applies to any resource of {subject}")
    return SecurityLevelReport(
        id=report_id or f"assess:{subject}",
        subject=subject,
        issuer=issuer,
        evaluation=evaluation,
    )
