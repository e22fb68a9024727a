"""Quick end-to-end check of the Python bindings.

Build and install first:

    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
    python python/smoke_test.py
"""

import json
import math

import pyisospectral as iso

PI2 = math.pi ** 2


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b}"


def main():
    cfg = iso.SolverConfig(steps=2048)

    zero = iso.Potential.zero(2)
    s = iso.compute_spectrum(zero, 100.0, cfg)
    assert s.multiplicities == [2, 2, 2], s.multiplicities
    for n, lam in enumerate(s.eigenvalues, start=1):
        close(lam, (n * math.pi) ** 2, 1e-6)

    g = s.group(1)
    close(g.g_alpha[0][0].real, 1 / (2 * PI2), 1e-9)
    res = iso.m_residue(s, 1)
    close(res[0][0].real, -2 * PI2, 1e-4 * 2 * PI2)

    m = iso.weyl_m(iso.Potential.zero(1), -1.0)
    close(m[0][0].real, -1 / math.tanh(1.0), 1e-7)

    diag = iso.Potential.constant_diagonal([0.0, 10.0])
    sd = iso.compute_spectrum(diag, 60.0)
    assert sd.multiplicities == [1, 1, 1, 1]
    b = sd.group(1).b_alpha
    target = [[4 * x for x in row] for row in b]
    t = iso.transform(diag, 1, target)
    assert t.depth == 1
    st = iso.compute_spectrum(t, 60.0, data=False)
    for a, c in zip(sd.eigenvalues, st.eigenvalues):
        close(a, c, 1e-6)

    bad = [[0.0, 0.0], [0.0, 2 * PI2]]
    try:
        iso.transform(diag, 1, bad)
    except iso.RejectedTargetError as e:
        assert "F_alpha" in str(e)
    else:
        raise AssertionError("target meeting F_1 was accepted")

    report = json.loads(s.to_json())
    assert len(report["groups"]) == 3

    checks = iso.verify(zero, lambda_max=60.0)
    failed = [c.name for c in checks if not c.passed]
    assert not failed, failed

    print("smoke test ok:", len(checks), "checks passed")


if __name__ == "__main__":
    main()
