"""Prior specifications over patient parameters.

A prior splits into a kinetic part over (alpha, k, b) and an
initial-condition part over (yb, y0, yb0).  Searches profile the
initial conditions through a linear program, which keeps them exact
only for priors flat in those coordinates; the kinetic part enters
every search as an additive log term.  A non-flat initial-condition
part is honored wherever the full parameter vector is fixed
(`log_posterior_at`) and ignored, by documented design, inside the
profiled searches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from ..dynamics import PatientParams
from ..errors import InvalidParameterError

KineticPrior = Callable[[float, float, float], float]   # (alpha, k, b) -> nats
InitialPrior = Callable[[float, float, float], float]   # (yb, y0, yb0) -> nats


@dataclass(frozen=True)
class PriorSpec:
    """Log-prior evaluator; ``None`` parts mean uniform (zero nats)."""
    kinetic: Optional[KineticPrior] = None
    initial: Optional[InitialPrior] = None

    def log_kinetic(self, alpha: float, k: float, b: float) -> float:
        if self.kinetic is None:
            return 0.0
        v = float(self.kinetic(alpha, k, b))
        if not math.isfinite(v):
            raise InvalidParameterError(
                "prior must be finite on the declared domains; got "
                f"{v!r} at (alpha={alpha}, k={k}, b={b})")
        return v

    def log_full(self, params: PatientParams) -> float:
        v = self.log_kinetic(params.alpha, params.k, params.b)
        if self.initial is not None:
            w = float(self.initial(params.yb, params.y0, params.yb0))
            if not math.isfinite(w):
                raise InvalidParameterError(
                    "prior must be finite on the declared domains; got "
                    f"{w!r} at (yb={params.yb}, y0={params.y0}, "
                    f"yb0={params.yb0})")
            v += w
        return v


UNIFORM_PRIOR = PriorSpec()
