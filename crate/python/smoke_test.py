"""Smoke test for the fiberdd extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`.
"""

import math

import fiberdd


def close(a, b, tol=1e-9):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    pkg = fiberdd.Package()

    bell = fiberdd.Circuit.parse("qubits 2\nh 0\ncnot 0 1\n")
    out, metrics = fiberdd.simulate(pkg, bell)
    amps = pkg.statevector(out, 2)
    r = 1 / math.sqrt(2)
    assert close(amps, [r, 0, 0, r]), amps
    assert metrics["wall_s"] > 0

    c = fiberdd.Circuit.random(6, 60, 3)
    want = c.dense()
    for name in fiberdd.strategies():
        for cache in ("none", "local", "global"):
            p = fiberdd.Package()
            out, _ = fiberdd.simulate(p, c, strategy=name, workers=3, cache=cache)
            assert close(p.statevector(out, 6), want), (name, cache)

    g = fiberdd.Circuit.grover(8, 77)
    out, metrics = fiberdd.simulate(pkg, g, strategy="inner-fibers", workers=4)
    p = abs(pkg.amplitude(out, 8, 77)) ** 2
    assert p >= 0.99, p
    assert abs(pkg.norm2(out) - 1) <= 1e-9

    try:
        fiberdd.Circuit.parse("qubits 2\nbogus 1\n")
    except ValueError as e:
        assert "line 2" in str(e)
    else:
        raise AssertionError("parse error not raised")

    try:
        fiberdd.simulate(fiberdd.Package(max_nodes=100), fiberdd.Circuit.random(12, 300, 1))
    except MemoryError:
        pass
    else:
        raise AssertionError("node budget not enforced")

    print(f"ok: grover n=8 success {p:.6f}, mul hit {metrics['mul_hit']:.3f}")


if __name__ == "__main__":
    main()
