"""
Fuzzy rule-based classification of segmented regions.

A rule names a feature, carries a weight in (0, 1] and a list of conditions
on region attributes. Each condition maps an attribute value to a membership
in [0, 1]; the rule's confidence is ``weight * min(memberships)``. A region
goes to the feature of its most confident rule.

Rule documents are JSON::

    {"rules": [{"feature": "Feature_1", "weight": 1.0,
                "conditions": [{"attr": "tx_mean", "op": "range",
                                "thresholds": [0.7242, 2.8601],
                                "tolerance": 0.0, "shape": "linear"}]}]}

A plain listing in the report's phrasing is also accepted, one rule per
line::

    1. (1.000): If tx_mean [0.7242, 2.8601], then object belongs to "Feature_1".
    2. (1.000): If avgband_1 < 2.0131, then object belongs to "Feature_2".
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attributes import RegionAttributes
from .errors import DataError
from .raster import atomic_write

UNCLASSIFIED = "unclassified"
SHAPES = ("linear", "s_type")
OPS = {"lt": "less_than", "gt": "greater_than", "range": "in_range"}
_ATTR = re.compile(r"^(avgband_[1-9]\d*|tx_mean|majaxislen|area|pixel_count)$")


def smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True)
class MembershipFunction:
    comparator: str  # less_than | greater_than | in_range
    thresholds: tuple[float, ...]
    tolerance: float = 0.0
    shape: str = "linear"

    def __post_init__(self):
        if self.comparator not in OPS.values():
            raise DataError(f"unknown comparator {self.comparator!r}")
        if self.shape not in SHAPES:
            raise DataError(f"function type must be linear or s_type, got {self.shape!r}")
        th = tuple(float(t) for t in np.atleast_1d(self.thresholds))
        want = 2 if self.comparator == "in_range" else 1
        if len(th) != want:
            raise DataError(f"{self.comparator} needs {want} threshold(s), got {len(th)}")
        if not all(np.isfinite(th)):
            raise DataError("thresholds must be finite")
        if want == 2 and th[0] > th[1]:
            raise DataError(f"range low {th[0]} exceeds high {th[1]}")
        if not (np.isfinite(self.tolerance) and self.tolerance >= 0):
            raise DataError(f"tolerance must be non-negative, got {self.tolerance}")
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "tolerance", float(self.tolerance))

    def _ramp(self, t):
        t = min(max(t, 0.0), 1.0)
        return smoothstep(t) if self.shape == "s_type" else t

    def _below(self, v, T):
        tau = self.tolerance
        if tau == 0:
            return 1.0 if v < T else 0.0
        return self._ramp((T + tau - v) / (2.0 * tau))

    def _above(self, v, T):
        tau = self.tolerance
        if tau == 0:
            return 1.0 if v > T else 0.0
        return self._ramp((v - (T - tau)) / (2.0 * tau))

    def __call__(self, value: float) -> float:
        v = float(value)
        if self.comparator == "less_than":
            return self._below(v, self.thresholds[0])
        if self.comparator == "greater_than":
            return self._above(v, self.thresholds[0])
        lo, hi = self.thresholds
        if self.tolerance == 0:
            return 1.0 if lo <= v <= hi else 0.0
        return min(self._above(v, lo), self._below(v, hi))


def membership(fn: MembershipFunction, value: float) -> float:
    return fn(value)


@dataclass(frozen=True)
class FuzzyRule:
    feature_name: str
    conditions: tuple[tuple[str, MembershipFunction], ...]
    weight: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0:
            raise DataError(f"rule weight must lie in (0, 1], got {self.weight}")
        if not self.conditions:
            raise DataError(f"rule for {self.feature_name!r} has no conditions")
        for attr, _ in self.conditions:
            if not _ATTR.match(attr):
                raise DataError(f"unknown attribute {attr!r}")
        object.__setattr__(self, "conditions", tuple(self.conditions))


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[FuzzyRule, ...]

    def __post_init__(self):
        if not self.rules:
            raise DataError("a rule set needs at least one rule")
        object.__setattr__(self, "rules", tuple(self.rules))

    def features(self) -> list[str]:
        """Feature names in first-mention order."""
        return list(dict.fromkeys(r.feature_name for r in self.rules))


def evaluate_rule(rule: FuzzyRule, attrs: RegionAttributes) -> float:
    return rule.weight * min(fn(attrs.value(attr)) for attr, fn in rule.conditions)


@dataclass
class ObjectClassification:
    region_ids: list[int]
    features: list[str]
    confidences: list[float]
    # rule x region confidence table
    table: np.ndarray

    def unclassified_count(self) -> int:
        return sum(f == UNCLASSIFIED for f in self.features)


def classify_objects(ruleset: RuleSet, attrs_list: Sequence[RegionAttributes]) -> ObjectClassification:
    """
    Evaluate every rule on every region and keep the most confident one.

    Ties go to the earliest rule; a region on which every rule scores 0 is
    ``"unclassified"``.
    """
    table = np.array(
        [[evaluate_rule(rule, a) for a in attrs_list] for rule in ruleset.rules], dtype=np.float64
    ).reshape(len(ruleset.rules), len(attrs_list))
    features, confidences = [], []
    for j in range(len(attrs_list)):
        best = int(np.argmax(table[:, j]))
        conf = float(table[best, j])
        features.append(ruleset.rules[best].feature_name if conf > 0 else UNCLASSIFIED)
        confidences.append(conf)
    return ObjectClassification([a.region_id for a in attrs_list], features, confidences, table)


# ---------------------------------------------------------------------------
# documents

_LINE = re.compile(
    r"""^\s*(?:\d+\.\s*)?\((?P<weight>[^)]*)\)\s*:\s*If\s+(?P<conds>.+?),\s*then\s+object\s+belongs\s+to\s+
        ["“](?P<feature>[^"”]+)["”]\.?\s*$""",
    re.VERBOSE | re.IGNORECASE,
)
_COND = re.compile(
    r"""^\s*(?P<attr>\w+)\s*
        (?:(?P<op><|>)\s*(?P<t>[-+\d.eE]+)|\[\s*(?P<lo>[-+\d.eE]+)\s*,\s*(?P<hi>[-+\d.eE]+)\s*\])
        (?:\s*\(\s*tolerance\s+(?P<tol>[-+\d.eE]+)(?:\s*,\s*(?P<shape>linear|s_type))?\s*\))?\s*$""",
    re.VERBOSE,
)


def _condition_from_text(text: str):
    m = _COND.match(text)
    if not m:
        raise DataError(f"cannot parse rule condition {text!r}")
    tol = float(m["tol"]) if m["tol"] else 0.0
    shape = m["shape"] or "linear"
    if m["op"]:
        comp = "less_than" if m["op"] == "<" else "greater_than"
        fn = MembershipFunction(comp, (float(m["t"]),), tol, shape)
    else:
        fn = MembershipFunction("in_range", (float(m["lo"]), float(m["hi"])), tol, shape)
    return m["attr"], fn


def _parse_listing(text: str) -> RuleSet:
    rules = []
    for line in text.splitlines():
        if not line.strip():
            continue
        m = _LINE.match(line)
        if not m:
            raise DataError(f"cannot parse rule line {line.strip()!r}")
        try:
            weight = float(m["weight"])
        except ValueError:
            raise DataError(f"bad rule weight {m['weight']!r}")
        conds = [_condition_from_text(c) for c in re.split(r"\s+and\s+", m["conds"])]
        rules.append(FuzzyRule(m["feature"], tuple(conds), weight))
    return RuleSet(tuple(rules))


def _condition_from_json(c) -> tuple[str, MembershipFunction]:
    try:
        op = c["op"]
        attr = c["attr"]
    except (KeyError, TypeError):
        raise DataError(f"rule condition needs 'attr' and 'op': {c!r}")
    if op not in OPS:
        raise DataError(f"unknown op {op!r}; expected one of {sorted(OPS)}")
    thresholds = c.get("thresholds", c.get("threshold"))
    if thresholds is None:
        raise DataError(f"rule condition on {attr!r} has no threshold")
    return attr, MembershipFunction(
        OPS[op], tuple(np.atleast_1d(thresholds).tolist()), float(c.get("tolerance", 0.0)), c.get("shape", "linear")
    )


def ruleset_from_document(doc) -> RuleSet:
    if not isinstance(doc, dict) or "rules" not in doc:
        raise DataError("rule document must contain a 'rules' list")
    rules = []
    for r in doc["rules"]:
        try:
            feature = str(r["feature"])
            conds = r["conditions"]
        except (KeyError, TypeError):
            raise DataError(f"rule needs 'feature' and 'conditions': {r!r}")
        rules.append(FuzzyRule(feature, tuple(_condition_from_json(c) for c in conds), float(r.get("weight", 1.0))))
    return RuleSet(tuple(rules))


def load_ruleset(document: str) -> RuleSet:
    """Parse a rule document given as text (JSON or the plain rule listing)."""
    if not document.strip():
        raise DataError("empty rule document")
    stripped = document.lstrip()
    if stripped.startswith("{"):
        try:
            return ruleset_from_document(json.loads(document))
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed rule document: {exc}")
    return _parse_listing(document)


def read_ruleset(path) -> RuleSet:
    try:
        return load_ruleset(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"rule document not found: {path}")


_REVERSE_OPS = {v: k for k, v in OPS.items()}


def ruleset_to_document(ruleset: RuleSet) -> dict:
    return {
        "rules": [
            {
                "feature": r.feature_name,
                "weight": r.weight,
                "conditions": [
                    {
                        "attr": attr,
                        "op": _REVERSE_OPS[fn.comparator],
                        "thresholds": list(fn.thresholds),
                        "tolerance": fn.tolerance,
                        "shape": fn.shape,
                    }
                    for attr, fn in r.conditions
                ],
            }
            for r in ruleset.rules
        ]
    }


def save_ruleset(ruleset: RuleSet) -> str:
    return json.dumps(ruleset_to_document(ruleset), indent=2) + "\n"


def format_condition(attr: str, fn: MembershipFunction) -> str:
    if fn.comparator == "in_range":
        text = f"{attr} [{fn.thresholds[0]:.4f}, {fn.thresholds[1]:.4f}]"
    else:
        op = "<" if fn.comparator == "less_than" else ">"
        text = f"{attr} {op} {fn.thresholds[0]:.4f}"
    if fn.tolerance > 0:
        text += f" (tolerance {fn.tolerance!r}, {fn.shape})"
    return text


def format_rule(index: int, rule: FuzzyRule) -> str:
    conds = " and ".join(format_condition(a, fn) for a, fn in rule.conditions)
    return f'{index}. ({rule.weight:.3f}): If {conds}, then object belongs to "{rule.feature_name}".'


def format_ruleset(ruleset: RuleSet) -> str:
    return "\n".join(format_rule(i, r) for i, r in enumerate(ruleset.rules, 1)) + "\n"


# ---------------------------------------------------------------------------
# outputs


def assignments_to_tsv(result: ObjectClassification) -> str:
    lines = ["region_id\tfeature\tconfidence"]
    for rid, feat, conf in zip(result.region_ids, result.features, result.confidences):
        lines.append(f"{rid}\t{feat}\t{conf!r}")
    return "\n".join(lines) + "\n"


def load_assignments(path) -> dict[int, str]:
    out = {}
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split("\t")[:2] != ["region_id", "feature"]:
        raise DataError(f"{path} is not an assignment table")
    for line in lines[1:]:
        rid, feat, _ = line.split("\t")
        out[int(rid)] = feat
    return out


def save_confidence_maps(directory, ruleset: RuleSet, result: ObjectClassification) -> list[Path]:
    """One table per rule: region id and that rule's confidence."""
    paths = []
    for i, rule in enumerate(ruleset.rules):
        path = Path(directory) / f"rule_{i + 1:02d}_{rule.feature_name}.tsv"
        body = ["region_id\tconfidence"] + [
            f"{rid}\t{c!r}" for rid, c in zip(result.region_ids, result.table[i].tolist())
        ]
        atomic_write(path, "\n".join(body) + "\n")
        paths.append(path)
    return paths
