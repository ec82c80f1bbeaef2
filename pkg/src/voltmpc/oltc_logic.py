"""Tap supervisor driven by the optimal slack values of the MPC problem."""

from __future__ import annotations

import math
from dataclasses import dataclass

#: tap command that lowers the busbar voltage (raising the tap index)
REDUCE_VOLTAGE = +1
RAISE_VOLTAGE = -1


def dwell_samples(dwell_time: float, T: float) -> int:
    """Samples covering the dwell time, rounded up."""
    return int(math.ceil(dwell_time / T - 1e-12))


@dataclass
class OltcSupervisor:
    """Commands a tap change after the slack imbalance holds for ``dwell`` samples.

    ``delta = eps_hi - eps_lo``; |delta| below ``deadband`` counts as zero.
    The persistence counter restarts after every commutation, and a lockout
    of ``dwell`` samples follows it.
    """

    dwell: int = 38
    deadband: float = 1e-6
    persistence: int = 0
    sign: int = 0
    lockout: int = 0
    last_command: int = 0

    @classmethod
    def from_times(cls, dwell_time: float = 75.0, T: float = 2.0, deadband: float = 1e-6):
        return cls(dwell=dwell_samples(dwell_time, T), deadband=deadband)

    def reset(self) -> None:
        self.persistence = self.sign = self.lockout = self.last_command = 0

    def supervise(self, eps_lo: float, eps_hi: float) -> int:
        if eps_lo < 0 or eps_hi < 0:
            raise ValueError("slacks must be nonnegative")
        if self.lockout > 0:
            self.lockout -= 1

        delta = eps_hi - eps_lo
        s = 0 if abs(delta) < self.deadband else (1 if delta > 0 else -1)
        if s == 0:
            self.persistence = 0
        elif s == self.sign:
            self.persistence += 1
        else:
            self.persistence = 1
        self.sign = s

        cmd = 0
        if s != 0 and self.persistence >= self.dwell and self.lockout == 0:
            cmd = REDUCE_VOLTAGE if s > 0 else RAISE_VOLTAGE
            self.persistence = 0
            self.lockout = self.dwell
        self.last_command = cmd
        return cmd
