"""Synthetic Poisson workload generation and trace-file ingestion.

Trace CSV format: header ``request_id,arrival_slot,prompt_tokens,
response_tokens``; UTF-8 integers; lines starting with ``#`` are comments.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ParseError

TRACE_HEADER = ["request_id", "arrival_slot", "prompt_tokens",
                "response_tokens"]


@dataclass(frozen=True)
class ArrivalRecord:
    request_id: int
    arrival_slot: int
    prompt_tokens: int
    response_tokens: int


@dataclass
class Trace:
    records: List[ArrivalRecord] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self):
        ids = [r.request_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate request ids in trace")

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class LengthDistribution:
    """Token-length sampler for prompts and responses."""

    kind: str = "lognormal"
    prompt_mean_log: float = 4.6  # median ~100 tokens pre-scaling
    prompt_sigma_log: float = 0.8
    response_mean_log: float = 5.3  # median ~200 tokens pre-scaling
    response_sigma_log: float = 0.9
    prompt_histogram: Optional[Tuple[Tuple[int, float], ...]] = None
    response_histogram: Optional[Tuple[Tuple[int, float], ...]] = None
    scale: int = 1

    def __post_init__(self):
        if self.kind not in ("lognormal", "empirical-histogram"):
            raise ValueError(f"unknown length distribution {self.kind!r}")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        if self.kind == "empirical-histogram":
            if not self.prompt_histogram or not self.response_histogram:
                raise ValueError("histogram kind requires histogram bins")

    def _sample_hist(self, rng: np.random.Generator,
                     hist: Tuple[Tuple[int, float], ...]) -> int:
        values = np.array([v for v, _ in hist], dtype=np.int64)
        weights = np.array([w for _, w in hist], dtype=np.float64)
        weights = weights / weights.sum()
        return int(rng.choice(values, p=weights))

    def sample(self, rng: np.random.Generator) -> Tuple[int, int]:
        """One (prompt_tokens, response_tokens) draw, scaled, >= 1 each."""
        if self.kind == "lognormal":
            prompt = int(rng.lognormal(self.prompt_mean_log,
                                       self.prompt_sigma_log))
            response = int(rng.lognormal(self.response_mean_log,
                                         self.response_sigma_log))
        else:
            prompt = self._sample_hist(rng, self.prompt_histogram)
            response = self._sample_hist(rng, self.response_histogram)
        return max(1, prompt) * self.scale, max(1, response) * self.scale


def gen_poisson(mean_interarrival_slots: float, duration_slots: int,
                dist: LengthDistribution, seed: int) -> Trace:
    """Poisson arrivals over a horizon; reproducible from the seed."""
    if mean_interarrival_slots <= 0:
        raise ValueError("mean_interarrival_slots must be > 0")
    if duration_slots < 0:
        raise ValueError("duration_slots must be >= 0")
    rng = np.random.default_rng(seed)
    records = []
    t = 0.0
    request_id = 0
    while True:
        t += rng.exponential(mean_interarrival_slots)
        slot = int(t)
        if slot >= duration_slots:
            break
        prompt, response = dist.sample(rng)
        records.append(ArrivalRecord(request_id, slot, prompt, response))
        request_id += 1
    return Trace(records=records, metadata={
        "seed": seed,
        "generator": "poisson",
        "mean_interarrival_slots": mean_interarrival_slots,
        "duration_slots": duration_slots,
    })


def scale_trace(trace: Trace, factor: int) -> Trace:
    """Multiply every prompt/response length by an integer factor."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    records = [replace(r,
                       prompt_tokens=r.prompt_tokens * factor,
                       response_tokens=r.response_tokens * factor)
               for r in trace.records]
    meta = dict(trace.metadata)
    meta["scale_factor"] = meta.get("scale_factor", 1) * factor
    return Trace(records=records, metadata=meta,
                 warnings=list(trace.warnings))


def load_trace(path: str) -> Trace:
    """Parse a trace CSV; sorts non-monotone arrivals with a warning."""
    records = []
    warnings: List[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        header_seen = False
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = next(csv.reader([line]))
            fields = [f.strip() for f in fields]
            if not header_seen:
                if fields != TRACE_HEADER:
                    raise ParseError(
                        f"bad header {fields!r}, expected {TRACE_HEADER!r}",
                        line=lineno)
                header_seen = True
                continue
            if len(fields) != 4:
                raise ParseError(f"expected 4 fields, got {len(fields)}",
                                 line=lineno)
            try:
                rid, slot, prompt, response = (int(f) for f in fields)
            except ValueError:
                raise ParseError(f"non-integer field in {fields!r}",
                                 line=lineno) from None
            if rid < 0 or slot < 0:
                raise ParseError("request_id and arrival_slot must be >= 0",
                                 line=lineno)
            if prompt < 1 or response < 1:
                raise ParseError("token counts must be >= 1", line=lineno)
            records.append(ArrivalRecord(rid, slot, prompt, response))
        if not header_seen:
            raise ParseError("missing header", line=1)
    slots = [r.arrival_slot for r in records]
    if slots != sorted(slots):
        warnings.append("arrival slots were not monotone; trace re-sorted")
        records.sort(key=lambda r: (r.arrival_slot, r.request_id))
    return Trace(records=records, metadata={"source": path},
                 warnings=warnings)


def save_trace(trace: Trace, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key in sorted(trace.metadata):
            fh.write(f"# {key}: {trace.metadata[key]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for r in trace.records:
            writer.writerow([r.request_id, r.arrival_slot,
                             r.prompt_tokens, r.response_tokens])
