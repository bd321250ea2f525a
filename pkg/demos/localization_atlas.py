"""
Covering a ball with small-oscillation charts
=============================================

Local arguments need the diffusion matrix to be nearly constant on each
chart.  We cover B(0, 3) for Q0(x, y) = 2 + sin(x), re-check each chart on a
finer lattice and look at one cutoff model.
"""

import numpy as np

from degsde.localizer import build_cover, localize_model, verify_cover
from degsde.models import model_from_json

m = model_from_json({"d": 2, "d0": 1, "A": [[0, 0], [1, 0]], "b0": ["0"], "Q0": [["2 + sin(x)"]]})
atlas = build_cover(m, R=3.0, gamma_rule=0.1)
summary = atlas.summary()
print(f"{summary['n_charts']} charts, radii in [{summary['min_radius']:.4f}, {summary['max_radius']:.4f}]")
for k, info in summary["annuli"].items():
    print(f"  annulus {k}: {info['n_charts']} charts, eta {info['eta']:.3f}")

verdict = verify_cover(atlas, m, oversample_factor=10)
print("verified on a 10x lattice:", verdict.ok)

# halving the oscillation budget makes some charts fail, with a witness point
strict = verify_cover(atlas.with_gamma(atlas.gamma / 2), m)
print("with gamma/2:", strict.ok, strict.failures[0])

loc = localize_model(m, atlas, len(atlas) // 2)
inside = loc.center + 0.5 * loc.radius * np.array([[1.0, 0.0]])
outside = loc.center + 3.0 * loc.radius * np.array([[1.0, 0.0]])
print("inside the core:", loc.diffusion_matrix(inside).ravel(), m.diffusion_matrix(inside).ravel())
print("far away:", loc.diffusion_matrix(outside).ravel(), m.diffusion_matrix(loc.center[None]).ravel())
