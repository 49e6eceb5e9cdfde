"""Reference three-mark configuration used by the simulation studies.

The interaction matrices and decays are fixed; the background rates are not
part of that configuration and are chosen here so that all three variants
produce a few thousand events on moderate horizons.
"""

from __future__ import annotations

import numpy as np

from .model import ExInParams, MarkedEventSequence, ModelVariant
from .simulate import SimulationConfig, simulate

ALPHA = np.array([[0.73, 0.0, 0.0], [0.0, 0.9, 0.26], [0.0, 0.0, 0.94]])
GAMMA = np.array([[0.0, 0.0, 0.26], [0.0, 0.0, 0.0], [0.14, 0.0, 0.0]])
ETA = np.array([22.38, 4.19, 2.49])
PHI = np.array([2.64, 25.15, 2.74])
MU = np.array([0.15, 0.02, 0.02])

# horizons giving roughly 2000-3000 events on average for each generating variant
HORIZON = {
    ModelVariant.EXC_INH: 2400.0,
    ModelVariant.EXC_ONLY: 1300.0,
    ModelVariant.INH_ONLY: 13000.0,
}

# supplement-style self-limiting configuration
SL_TRUTH = {"mu": 0.65, "alpha": 0.65, "eta": 5.0, "gamma": 0.3, "phi": 3.0}
SL_HORIZON = 1000.0


def reference_params(variant: ModelVariant = ModelVariant.EXC_INH) -> ExInParams:
    full = ExInParams.from_matrices(MU, ALPHA, GAMMA, ETA, PHI)
    return full.restrict(variant)


def sized_dataset(
    variant: ModelVariant,
    seed: int = 0,
    count_range: tuple[int, int] = (2000, 3000),
    max_tries: int = 200,
) -> tuple[MarkedEventSequence, int]:
    """Simulate from the reference parameters of ``variant`` until the event count falls in ``count_range``.

    Seeds ``seed, seed + 1, ...`` are tried in order, so the result is
    deterministic; the seed actually used is returned.
    """
    variant = ModelVariant(variant)
    params = reference_params(variant)
    lo, hi = count_range
    for s in range(seed, seed + max_tries):
        seq = simulate(SimulationConfig(params, HORIZON[variant], variant, seed=s))
        if lo <= len(seq) <= hi:
            return seq, s
    raise RuntimeError(f"no seed in [{seed}, {seed + max_tries}) gave between {lo} and {hi} events")
