"""Confidence memories: per-sample stores of the most confident prediction.

One memory tracks the teacher's direct score predictions, another tracks the
reference network's recovered absolute scores. Lower sigma means higher
confidence (a prediction with sigma near zero is a confident one), so a write
replaces an entry only when it strictly lowers sigma; stored sigma is
therefore the running minimum over a sample's lifetime and never increases.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ContractError, FusionUnavailableError

TEACHER = "teacher"
REFERENCE = "reference"


@dataclass
class MemoryEntry:
    score: float
    sigma: float
    epoch_written: int


class ConfidenceMemory:
    """Map from sample id to the most confident (score, sigma) seen so far."""

    def __init__(self, kind: str):
        if kind not in (TEACHER, REFERENCE):
            raise ContractError(f"memory kind must be teacher or reference, got {kind!r}")
        self.kind = kind
        self.entries: dict[str, MemoryEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self.entries

    def maybe_write(self, sample_id: str, score: float, sigma: float, epoch: int) -> bool:
        """Insert or replace the entry if this prediction is more confident.

        Returns True when written, False when the existing entry is kept.
        Ties keep the old entry.
        """
        if sigma <= 0.0:
            raise ContractError(f"sigma must be strictly positive, got {sigma}")
        current = self.entries.get(sample_id)
        if current is not None and sigma >= current.sigma:
            return False
        self.entries[sample_id] = MemoryEntry(float(score), float(sigma), int(epoch))
        return True

    def read(self, sample_id: str) -> MemoryEntry | None:
        return self.entries.get(sample_id)

    def clear(self) -> None:
        self.entries.clear()

    # -- checkpoint serialization -------------------------------------------

    def save_tsv(self, path) -> None:
        """One line per entry: id, score, sigma, epoch (tab-separated).

        Floats use 17 significant digits so the round-trip is exact.
        """
        lines = [
            f"{sample_id}\t{e.score:.17g}\t{e.sigma:.17g}\t{e.epoch_written}\n"
            for sample_id, e in self.entries.items()
        ]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load_tsv(cls, path, kind: str) -> "ConfidenceMemory":
        mem = cls(kind)
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            sample_id, score, sigma, epoch = line.split("\t")
            mem.entries[sample_id] = MemoryEntry(float(score), float(sigma), int(epoch))
        return mem


def fuse_pseudo_label(mt_entry: MemoryEntry | None, mr_entry: MemoryEntry | None) -> float:
    """Average the two memory scores into the final pseudo-label."""
    if mt_entry is None or mr_entry is None:
        raise FusionUnavailableError("fusion requires entries from both memories")
    return (mt_entry.score + mr_entry.score) / 2.0
