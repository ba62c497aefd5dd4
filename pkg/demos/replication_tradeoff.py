"""Replicated versus spread-out designs for a quadratic response on [-1, 1].

The internal criteria (D, A) only see the information matrix. The external
criteria (DE, AE) also reward replicated points, since replication gives
pure-error degrees of freedom to protect against a misspecified mean.
"""

import numpy as np

from altdesign.core import Design
from altdesign.linear import objective, treatment_structure

designs = {
    "replicated": [-1, -1, 0, 0, 1, 1],
    "spread": [-1, -0.6, -0.2, 0.2, 0.6, 1],
    "mixed": [-1, -1, 0, 0.5, 1, 1],
}

print(f"{'design':<12}{'q':>3}{'d':>3}" + "".join(f"{k:>10}" for k in ("D", "A", "DE", "AE")))
for name, x in designs.items():
    d = Design(np.array(x, dtype=float).reshape(-1, 1), [[-1.0, 1.0]])
    ts = treatment_structure(d)
    vals = [objective(k, d, kappa=6.0) for k in ("D", "A", "DE", "AE")]
    print(f"{name:<12}{ts.q:>3}{ts.d:>3}" + "".join(f"{v:10.3f}" for v in vals))

print("\nlower is better")
