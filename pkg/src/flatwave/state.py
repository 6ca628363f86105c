"""Perturbation state and time-derivative bundles shared across modules."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = ["State", "StateRates"]


@dataclass
class State:
    """Perturbation triple (q, u, eta) at one time instant.

    ``q`` is the pressure-like volume unknown, ``u`` the velocity (d
    components, no-slip at the bottom nodes), ``eta`` the surface
    elevation.
    """

    q: np.ndarray
    u: np.ndarray
    eta: np.ndarray
    t: float = 0.0

    def copy(self):
        return State(q=self.q.copy(), u=self.u.copy(), eta=self.eta.copy(),
                     t=self.t)

    def scaled(self, factor):
        return State(q=self.q * factor, u=self.u * factor,
                     eta=self.eta * factor, t=self.t)

    def with_time(self, t):
        return replace(self, t=t)


@dataclass
class StateRates:
    """Time derivatives (or estimates of them) accompanying a state.

    ``deta`` feeds the lifted d_t phi; ``du`` enters the quadratic momentum
    remainder; ``dq`` is only needed by the transport diagnostic.
    """

    dq: np.ndarray | None = None
    du: np.ndarray | None = None
    deta: np.ndarray | None = None

    def scaled(self, factor):
        sc = lambda a: None if a is None else a * factor
        return StateRates(dq=sc(self.dq), du=sc(self.du), deta=sc(self.deta))
