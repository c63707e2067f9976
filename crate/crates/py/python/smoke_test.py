"""Smoke test for the compiled `homog` extension module."""
import json
import math

import homog


def main():
    assert "sine_g" in homog.presets()

    summary = homog.cell(json.dumps({"preset": "sine_g", "cell": {"resolution": 64}}))
    g0 = summary["g0"][0][0][0]
    assert abs(g0 - 0.5) < 1e-8, g0

    eff = homog.effective(json.dumps({"preset": "constant", "params": {"g": 2.0}}))
    assert abs(eff["g0"][0][0][0] - 2.0) < 1e-12

    snap = homog.evolve(json.dumps({"preset": "heat", "evolve": {"eps": 0.0625, "t": 0.25}}))
    worst = max(abs(u.real - math.exp(-math.pi ** 2 * 0.25) * math.sin(math.pi * x)) for x, u in zip(snap["x"], snap["u_eps"]))
    assert worst < 1e-5, worst

    report = homog.sweep(json.dumps({
        "preset": "sine_g",
        "eps_list": [0.125, 0.0625, 0.03125],
        "times": [0.25],
        "n_per": 8,
        "sweep": {"measures": ["l2"]},
    }))
    slope = report["tables"][0]["fit"]["slope"]
    assert 0.85 <= slope <= 1.15, slope

    s, _, rms = homog.fit_rate([(e, 3 * e) for e in (0.5, 0.25, 0.125)])
    assert abs(s - 1) < 1e-12 and rms < 1e-12
    assert homog.theta(0.1, float("inf")) == 0.1

    try:
        homog.sweep(json.dumps({"preset": "sine_g", "eps_list": [0.25], "n_per": 2, "sweep": {}}))
    except ValueError as e:
        assert "n_per" in str(e)
    else:
        raise AssertionError("n_per = 2 accepted")

    print("smoke test passed: g0 = %.10f, heat error %.2e, L2 slope %.3f" % (g0, worst, slope))


if __name__ == "__main__":
    main()
