"""Communication ledger: counts model uploads at group and central level."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field


@dataclass
class CommLedger:
    """Upload counter.  One transfer = one model upload; broadcasts are free."""

    bytes_per_transfer: int = 0
    group_transfers: int = 0
    central_transfers: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def charge_group(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("transfer counts only grow")
        with self._lock:
            self.group_transfers += n

    def charge_central(self, n: int = 1) -> None:
        if n < 0:
            raise ValueError("transfer counts only grow")
        with self._lock:
            self.central_transfers += n

    @property
    def central_bytes(self) -> int:
        return self.central_transfers * self.bytes_per_transfer

    @property
    def group_bytes(self) -> int:
        return self.group_transfers * self.bytes_per_transfer

    def totals(self) -> dict:
        return {
            "group_transfers": self.group_transfers,
            "central_transfers": self.central_transfers,
            "bytes_per_transfer": self.bytes_per_transfer,
            "group_bytes": self.group_bytes,
            "central_bytes": self.central_bytes,
        }
