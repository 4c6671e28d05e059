"""Mouth-to-ear latency: measured pipeline steps plus a fixed additive term."""

from __future__ import annotations

from dataclasses import astuple, dataclass

NETWORK_MS = 15.0  # allowance for network latency
AUDIO_MS = 10.0  # allowance for the audio stack

PIPELINE = (
    "voice_encode",
    "encrypt",
    "c_to_r",
    "r_to_w",
    "preprocess",
    "pir_reply",
    "w_to_c",
    "pir_decode",
    "decrypt",
    "voice_decode",
)
COLUMNS = PIPELINE + ("additional", "total")


def additional_ms(snippet_ms: float) -> float:
    """One snippet of recording/playback plus network and audio allowances."""
    return snippet_ms + NETWORK_MS + AUDIO_MS


@dataclass(frozen=True)
class LatencyBreakdown:
    """All values in milliseconds; column order matches the CSV header."""

    voice_encode: float
    encrypt: float
    c_to_r: float
    r_to_w: float
    preprocess: float
    pir_reply: float
    w_to_c: float
    pir_decode: float
    decrypt: float
    voice_decode: float
    additional: float
    total: float

    @classmethod
    def from_parts(cls, parts: dict[str, float], snippet_ms: float | None = None, additional: float | None = None) -> LatencyBreakdown:
        if additional is None:
            if snippet_ms is None:
                raise ValueError("need snippet_ms or an explicit additional term")
            additional = additional_ms(snippet_ms)
        pipe = [float(parts[k]) for k in PIPELINE]
        return cls(*pipe, additional, sum(pipe) + additional)

    @property
    def pipeline_ms(self) -> float:
        return sum(getattr(self, k) for k in PIPELINE)

    def row(self) -> tuple[float, ...]:
        return astuple(self)


def mouth_to_ear(b: LatencyBreakdown) -> float:
    return b.pipeline_ms + b.additional


# Reference breakdown rows (ms): name, snippet ms, group size, clients, ten pipeline steps, additional, total.
REFERENCE_ROWS = {
    "LS": dict(snippet_ms=200, G=3, clients=6, parts=(14.14, 0.04, 11.72, 1.56, 13.68, 81.53, 1.5, 47.13, 0.03, 37.52), additional=225, total=433.84),
    "LG": dict(snippet_ms=80, G=5, clients=6, parts=(5.57, 0.02, 1.21, 11.32, 6.31, 107.02, 1.82, 47.01, 0.04, 29.7), additional=105, total=315.01),
    "MC": dict(snippet_ms=80, G=3, clients=11, parts=(5.97, 0.02, 0.96, 11.14, 6.73, 91.55, 1.42, 46.83, 0.03, 17.23), additional=105, total=286.98),
}


def reference_breakdown(name: str) -> LatencyBreakdown:
    row = REFERENCE_ROWS[name]
    return LatencyBreakdown.from_parts(dict(zip(PIPELINE, row["parts"])), additional=row["additional"])

