"""Technology-proxy cost model.

Weights approximate CMOS transistor-count ratios (XOR about twice a NAND,
inverter about half).  All power figures downstream are proxies derived from
weighted gate area; only relative comparisons are meaningful and every report
labels them as proxy values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .genome import DEFAULT_FUNCTION_NAMES, FUNCTION_ARITY, Circuit

DEFAULT_AREA_WEIGHTS = {
    "identity": 0.0, "not": 0.5, "and": 1.0, "or": 1.0, "xor": 2.0,
    "nand": 1.0, "nor": 1.0, "xnor": 2.0, "const0": 0.0, "const1": 0.0,
}


@dataclass(frozen=True)
class GateCostTable:
    """Per-function relative area and delay weights."""

    area: dict = field(default_factory=lambda: dict(DEFAULT_AREA_WEIGHTS))
    delay: dict = field(default_factory=lambda: dict(DEFAULT_AREA_WEIGHTS))

    def __post_init__(self):
        for table in (self.area, self.delay):
            for name, w in table.items():
                if w < 0:
                    raise ValueError(f"negative weight for {name!r}")

    def weights_by_code(self) -> tuple[list[float], list[float]]:
        area, delay = [], []
        for name in DEFAULT_FUNCTION_NAMES:
            area.append(self.area.get(name))
            delay.append(self.delay.get(name))
        return area, delay

    @classmethod
    def from_json(cls, path) -> "GateCostTable":
        """Load ``{function-name: {"area": x, "delay": y}}``; missing entries
        fall back to the defaults."""
        with open(path) as fh:
            raw = json.load(fh)
        area = dict(DEFAULT_AREA_WEIGHTS)
        delay = dict(DEFAULT_AREA_WEIGHTS)
        for name, entry in raw.items():
            if name not in DEFAULT_FUNCTION_NAMES:
                raise ValueError(f"unknown gate function {name!r} in cost table")
            if "area" in entry:
                area[name] = float(entry["area"])
            if "delay" in entry:
                delay[name] = float(entry["delay"])
        return cls(area=area, delay=delay)


@dataclass(frozen=True)
class CostReport:
    """Weighted-area cost of the active gates plus derived proxies.

    ``power_proxy`` equals area (activity-independent proxy); ``delay_proxy``
    is the weighted critical path; ``relative_power`` compares against a
    named reference circuit when one was given.
    """

    area: float
    power_proxy: float
    delay_proxy: float
    active_gates: int
    relative_power: float | None = None
    reference_id: str | None = None

    def to_json_dict(self) -> dict:
        d = {"area": self.area, "power_proxy": self.power_proxy,
             "delay_proxy": self.delay_proxy, "active_gates": self.active_gates}
        if self.relative_power is not None:
            d["relative_power"] = self.relative_power
        if self.reference_id is not None:
            d["reference_id"] = self.reference_id
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "CostReport":
        return cls(area=d["area"], power_proxy=d["power_proxy"],
                   delay_proxy=d["delay_proxy"], active_gates=d["active_gates"],
                   relative_power=d.get("relative_power"),
                   reference_id=d.get("reference_id"))

    def value(self, axis: str) -> float:
        if axis in ("area", "power_proxy", "delay_proxy", "active_gates"):
            return float(getattr(self, axis))
        if axis == "relative_power":
            if self.relative_power is None:
                raise ValueError("cost report has no reference circuit")
            return self.relative_power
        raise ValueError(f"unknown cost axis {axis!r}")


def _area_and_delay(circuit: Circuit, area_w: list, delay_w: list) -> tuple[float, float]:
    area = 0.0
    level: dict[int, float] = {}
    for i, g in enumerate(circuit.gates):
        wa, wd = area_w[g.fn], delay_w[g.fn]
        if wa is None or wd is None:
            name = DEFAULT_FUNCTION_NAMES[g.fn]
            raise ValueError(f"cost table is missing a weight for {name!r}")
        area += wa
        arity = FUNCTION_ARITY[g.fn]
        deps = []
        if arity >= 1:
            deps.append(level.get(g.in1, 0.0))
        if arity >= 2:
            deps.append(level.get(g.in2, 0.0))
        level[circuit.n_i + i] = wd + max(deps, default=0.0)
    delay = max((level.get(o, 0.0) for o in circuit.outputs), default=0.0)
    return area, delay


def cost_report(circuit: Circuit, table: GateCostTable | None = None,
                reference: Circuit | None = None,
                reference_id: str | None = None) -> CostReport:
    """Weighted-area/delay cost over the active gates only."""
    table = table or GateCostTable()
    area_w, delay_w = table.weights_by_code()
    area, delay = _area_and_delay(circuit, area_w, delay_w)
    relative = None
    if reference is not None:
        ref_area, _ = _area_and_delay(reference, area_w, delay_w)
        if ref_area > 0:
            relative = area / ref_area
        else:
            relative = 1.0 if area == 0 else math.inf
    return CostReport(area=area, power_proxy=area, delay_proxy=delay,
                      active_gates=len(circuit.gates),
                      relative_power=relative, reference_id=reference_id)
