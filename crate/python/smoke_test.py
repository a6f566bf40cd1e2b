"""Smoke test for the dirpose_py extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml` or
`maturin build -m crates/py/Cargo.toml` followed by `pip install` of the wheel.
"""

import math
import sys

import dirpose_py as dp


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    # Rotations and projections
    r = dp.Rotation.from_axis_angle([1.0, 2.0, -0.5], 1.1)
    assert close(r.angle(), 1.1, 1e-12)
    assert close(dp.geodesic_distance(r, r.half() * r.half()), 0.0, 1e-7)
    noisy = [[v + 0.01 * (i - j) for j, v in enumerate(row)] for i, row in enumerate(r.matrix())]
    assert dp.geodesic_distance(dp.procrustes_project(noisy), r) < 0.05
    m = r.matrix()
    g = dp.gram_schmidt_project([m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]])
    assert dp.geodesic_distance(g, r) < 1e-7

    # Spherical distributions
    p = dp.SphericalDistribution.vmf(64, 64, [0.0, 0.0, 1.0], 10.0)
    assert close(p.total_mass(), 1.0, 1e-9)
    resultant = math.sqrt(sum(c * c for c in p.expectation()))
    assert close(resultant, 1.0 / math.tanh(10.0) - 0.1, 5e-3)
    u = dp.SphericalDistribution.from_raw(8, 8, [0.0] * 64)
    assert close(u.total_mass(), 1.0, 1e-9)
    assert len(dp.spherical_pad(4, 4, list(range(16)), 1)) == 36

    # Grid fits
    fit = dp.fit_direction([0.3, -0.4, 0.8], kappa=10.0, grid=32, steps=600)
    assert fit.angular_error_deg < 0.5, fit.angular_error_deg
    _, err = dp.fit_rotation(dp.Rotation.random(3), grid=32, steps=600)
    assert err < 1.0, err

    # Dataset, pipeline and ranks
    pairs = dp.generate_pairs(4, resolution=48, pano_width=192, seed=5)
    assert len(pairs) == 4 and all(0.0 < q.overlap <= 1.0 for q in pairs)
    (h, w, c), pixels = pairs[0].image(0)
    assert (h, w, c) == (48, 48, 3) and len(pixels) == h * w * c
    oracle = dp.run_pipeline(pairs, "oracle")
    assert max(oracle.rotation_errors_deg + oracle.translation_errors_deg) < 1e-6
    perturbed = dp.run_pipeline(pairs, "oracle", perturb_deg=15.0, seed=1)
    assert max(perturbed.rotation_errors_deg) <= 30.0
    ranks = dict(dp.rank_methods([("a", [1.0, 1.0]), ("b", [2.0, 1.0])]))
    assert ranks == {"a": 1.25, "b": 1.75}, ranks

    try:
        dp.generate_pairs(0)
    except ValueError:
        pass
    else:
        raise AssertionError("zero pairs accepted")

    print("dirpose_py smoke test: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
