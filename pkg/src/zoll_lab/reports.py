"""Shared report containers for functional estimates."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class FunctionalReport:
    """A computed functional value with certificate and convergence metadata.

    direction documents the estimator bias: "upper-bound" for numerical
    infima over finite grids/families/truncations, "lower-bound" where a
    minorant is reported, "two-sided" for heuristics whose bias is not signed.
    The trace holds (parameter, value) pairs, e.g. the doubling horizons of a
    sup-over-T estimate; the reported value always equals the last trace entry
    when a trace is present.
    """

    name: str
    value: float
    direction: str = "upper-bound"
    certificate: dict = field(default_factory=dict)
    horizon: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "direction": self.direction,
            "certificate": _jsonable(self.certificate),
            "horizon": _jsonable(self.horizon),
            "trace": [[float(p), float(v)] for p, v in self.trace],
            "warnings": list(self.warnings),
        }


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
