"""Model-averaged cubic splines: posterior over basis size and predictive loss.

Fits a noisy saturating curve with every basis size at once, prints the
posterior over the number of basis functions, then estimates the expected
predictive loss of two designs when the truth is a spline (internal) and
when it is a Michaelis-Menten curve (external).
"""

import numpy as np

from altdesign.core import Design
from altdesign.michaelis import eta_batch
from altdesign.numerics import RandomStream
from altdesign.spline import SplinePrior, model_averaged_mean, model_posterior, pse_expected_loss

prior = SplinePrior(m_values=tuple(range(4, 9)))
rng = np.random.default_rng(5)
x = np.linspace(0, 1, 10)
design = Design.on_interval(x)
truth = eta_batch(np.array([[150.0, 40.0]]), x)[0]
y = truth + rng.normal(0, 1, x.size)

probs = model_posterior(y, design, prior)
print("posterior over basis size:", {m: round(float(p), 3) for m, p in zip(prior.models(10), probs)})
grid = np.linspace(0, 1, 5)
print("averaged mean on a coarse grid:", np.round(model_averaged_mean(grid, y, design, prior), 2))

for name, pts in {"uniform": x, "front-loaded": x ** 1.5}.items():
    d = Design.on_interval(pts)
    stream = RandomStream(99)
    internal = pse_expected_loss("internal", d, 2000, stream, prior)
    external = pse_expected_loss("external", d, 2000, stream, prior)
    print(f"{name:<13} internal {internal.value:.3f} ± {internal.mc_standard_error:.3f}"
          f"   external {external.value:.3f} ± {external.mc_standard_error:.3f}")
