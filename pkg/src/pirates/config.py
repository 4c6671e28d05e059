"""Epoch timing shared by every node."""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_BITRATE = 1600  # bit/s


def snippet_capacity(snippet_ms: int, bitrate_bps: int = DEFAULT_BITRATE) -> int:
    """Bytes of voice produced per snippet."""
    return -(-snippet_ms * bitrate_bps // 8000)


@dataclass(frozen=True)
class EpochSchedule:
    """Phase durations of one epoch, in milliseconds.

    Every node derives phase boundaries from the epoch start time announced by
    the coordinator; relays close snippet collection ``processing_budget_ms``
    before the end of each round.
    """

    rounds: int = 10
    round_ms: int = 250
    snippet_ms: int = 250
    mapping_ms: int = 100
    d1_ms: int = 100
    d2_ms: int = 100
    d3_ms: int = 100
    d4_ms: int = 100
    processing_budget_ms: int = 100
    bitrate_bps: int = DEFAULT_BITRATE

    def __post_init__(self):
        if self.round_ms < self.snippet_ms:
            raise ValueError("round_ms must be at least snippet_ms")
        if not 0 <= self.processing_budget_ms < self.round_ms:
            raise ValueError("processing budget must fit inside a round")
        if self.rounds < 1:
            raise ValueError("need at least one round")

    @property
    def capacity(self) -> int:
        return snippet_capacity(self.snippet_ms, self.bitrate_bps)

    @property
    def d1_start(self) -> int:
        return self.mapping_ms

    @property
    def d2_start(self) -> int:
        return self.d1_start + self.d1_ms

    @property
    def d3_start(self) -> int:
        return self.d2_start + self.d2_ms

    @property
    def d4_start(self) -> int:
        return self.d3_start + self.d3_ms

    @property
    def communication_start(self) -> int:
        return self.d4_start + self.d4_ms

    def round_start(self, r: int) -> int:
        return self.communication_start + (r - 1) * self.round_ms

    def relay_cutoff(self, r: int) -> int:
        return self.round_start(r) + self.round_ms - self.processing_budget_ms

    def round_end(self, r: int) -> int:
        return self.round_start(r) + self.round_ms

    @property
    def epoch_ms(self) -> int:
        return self.round_end(self.rounds)
