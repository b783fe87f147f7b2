"""Physical scales, dimensionless groups and the electroquasistatic check.

All inputs are SI: volts, metres, rad/s, S/m, amperes, S/m^2, H/m, F/m.
Defaults are the order-of-magnitude scales of a weakly electric fish in
fresh water.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import constants

EQS_THRESHOLD = 0.01


@dataclass(frozen=True)
class PhysicalParams:
    V0: float = 10e-3            # organ discharge voltage
    L: float = 0.1               # fish length
    omega0: float = 1e3          # fundamental frequency
    sigma0: float = 100e-6 / 1e-2  # water conductivity, 100 uS/cm
    I0: float = 1e-3             # organ current
    sigma_b: float = 1.0         # body conductivity
    Sigma_skin: float = 100e-6 / 1e-4  # skin surface conductivity, 100 uS/cm^2
    h: float = 100e-6            # skin thickness
    mu: float = constants.mu_0
    eps_water: float = 80.0 * constants.epsilon_0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{f.name} must be strictly positive, got {v}")

    def as_dict(self) -> dict:
        return asdict(self)


def nondimensionalize(p: PhysicalParams) -> dict:
    """``k_b = sigma_b/sigma0``, ``k_s = h Sigma/sigma0``, ``delta = h/L``, ``xi = delta/k_s``."""
    k_b = p.sigma_b / p.sigma0
    k_s = p.h * p.Sigma_skin / p.sigma0
    delta = p.h / p.L
    return {"k_b": k_b, "k_s": k_s, "delta": delta, "xi": delta / k_s,
            "source_factor": p.I0 / (p.sigma0 * p.V0 * p.L)}


def eqs_validity(p: PhysicalParams, L_max: float, omega_max: float, threshold: float = EQS_THRESHOLD):
    """Ratio ``L_max omega_max sqrt(mu eps)`` (size over shortest wavelength) and its verdict."""
    if L_max < 0 or omega_max < 0:
        raise ValueError("L_max and omega_max must be non-negative")
    ratio = L_max * omega_max * np.sqrt(p.mu * p.eps_water)
    return float(ratio), bool(ratio < threshold)
