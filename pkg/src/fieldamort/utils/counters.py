"""Evaluation counters for the scaling benchmark."""

from dataclasses import dataclass


@dataclass
class OpCounter:
    """Counts model and oracle evaluations.

    `pair_evals` is one per (source, point) pair evaluated by the oracle.
    `embed_calls` is one per source passed through a hypernetwork and
    `field_calls` one per point passed through an inference network.
    """

    pair_evals: int = 0
    embed_calls: int = 0
    field_calls: int = 0

    @property
    def amortized_ops(self) -> int:
        return self.embed_calls + self.field_calls

    def reset(self) -> None:
        self.pair_evals = 0
        self.embed_calls = 0
        self.field_calls = 0
