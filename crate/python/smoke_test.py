"""Smoke test for the `mpm` extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o target/wheels
    pip install --force-reinstall target/wheels/mpm_py-*.whl
"""

import math

import mpm


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    gene = mpm.Model.fixture("gene")
    assert gene.vars == ["X1", "X2", "X3"]
    assert gene.system_size == 100.0

    inv = mpm.invariants(gene)
    assert inv["codim"] == 1 and inv["p_invariants"] == [[1, 1, 0]]
    assert inv["fast"]["codim"] == 1 and inv["fast"]["p_invariants"] == [[0, 1]]

    # slow manifold of the gene: active fraction k_u / (k_u + k_b y)
    for y in (0.0, 0.5, 3.0):
        (z,) = mpm.slow_manifold(gene, [y])
        assert close(z, 1.0 / (1.0 + y), 1e-9), (y, z)

    small = gene.with_system_size(10)
    red = mpm.qe_reduce(small)
    for y in range(0, 11):
        (z,) = red.fast_mean([float(y)])
        assert close(z, 10.0 / (1.0 + y / 10.0), 1e-10)
    doc, table = red.to_model({"X3": 30})
    assert table.startswith("X3,produce,degrade")
    states, probs = mpm.cme(doc)
    assert close(sum(probs), 1.0, 1e-9) and len(states) == 31

    ens = mpm.simulate(small, 1.0, replicates=8, seed=3, grid_points=5)
    assert ens == mpm.simulate(small, 1.0, replicates=8, seed=3, grid_points=5)
    assert all(close(m[0] + m[1], 10.0, 0.0) for m in ens["mean"])

    t, x = mpm.meanfield(gene, 1.0, points=3)
    assert t[0] == 0.0 and x[0] == [1.0, 0.0, 0.0]

    eq = mpm.equilibria(mpm.Model.fixture("toggle"), fast=[0.0])
    stable = sorted(e["point"] for e in eq["equilibria"] if e["stability"] == "stable")
    assert len(stable) == 2 and close(stable[0][0], 0.764, 1e-3) and close(stable[0][1], 5.931, 1e-3)

    report = mpm.commute(gene, 5.0, points=21)
    assert report["verdict"] == "commutes" and report["distance"] <= 1e-6

    try:
        mpm.Model.from_json("{}")
    except mpm.MpmError:
        pass
    else:
        raise AssertionError("malformed model accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
