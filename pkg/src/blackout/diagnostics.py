"""Shared counters for numerical events worth surfacing in metrics."""

from __future__ import annotations

from dataclasses import dataclass, asdict


@dataclass
class Diagnostics:
    """Mutable event counters threaded through heads and the network.

    wsoftmax_clamps: sample posteriors clamped away from 1 before log/divide.
    nce_saturations: NCE posteriors saturated to 1 in float64 (score far
        above the noise baseline, the documented instability of constant-Z
        NCE).
    full_softmax_calls: normalizations over the whole vocabulary; sampled
        training paths must never increment this.
    """

    wsoftmax_clamps: int = 0
    nce_saturations: int = 0
    full_softmax_calls: int = 0

    def as_dict(self) -> dict:
        return asdict(self)

    def merge(self, other: "Diagnostics") -> None:
        self.wsoftmax_clamps += other.wsoftmax_clamps
        self.nce_saturations += other.nce_saturations
        self.full_softmax_calls += other.full_softmax_calls
