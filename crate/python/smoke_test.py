"""Smoke test for the chemoflow extension module.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, or copy
`target/release/libchemoflow.so` to `chemoflow.so` on the PYTHONPATH.
"""

import math

import chemoflow


def main():
    mesh = chemoflow.Mesh(2.0, 1.0, 4, 2)
    assert mesh.n_nodes == 15 and mesh.n_triangles == 16
    assert abs(mesh.area - 2.0) < 1e-14

    points, weights = chemoflow.triangle_rule(4)
    assert abs(sum(weights) - 1.0) < 1e-14
    assert all(abs(sum(p) - 1.0) < 1e-14 for p in points)

    eta = chemoflow.eval_exact("eta", 0.0, 0.0, 0.0)
    assert abs(eta - 5.0) < 1e-14
    u1, u2 = chemoflow.eval_exact("u", 0.3, 0.7, 0.1)
    assert math.isfinite(u1) and math.isfinite(u2)

    params = chemoflow.ModelParams.unit()
    params.chi = 2.0
    sim = chemoflow.Simulation("test2", kx=6, ky=6, dt=1e-3, t_final=4e-3, params=params)
    mass0 = sim.mass
    rows = sim.run(2)
    assert [r["m"] for r in rows] == [1, 2]
    rows += sim.run()
    assert sim.m == sim.n_steps == 4
    assert abs(sim.t - 4e-3) < 1e-15
    assert len(sim.eta) == sim.mesh.n_nodes
    assert all(abs(r["div_residual"]) < 1e-10 for r in rows)
    print(f"test2: mass {mass0:.12f} -> {sim.mass:.12f}, alpha {sim.alpha:.6f}")

    drop = chemoflow.Simulation("test1", kx=8, ky=4, dt=1e-5, t_final=2e-5)
    before = drop.mass
    drop.run()
    assert abs(drop.mass - before) <= 1e-12 * abs(before)

    report = chemoflow.convergence_study([4, 8], dt=1e-3, t_final=2e-3)
    eta_errors = next(v for v in report["variables"] if v["variable"] == "eta")
    orders = chemoflow.observed_orders(eta_errors["linf_l2"], report["h"])
    print("eta L2 orders on [4, 8]:", orders)

    try:
        chemoflow.Simulation("nope")
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("unknown preset accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
