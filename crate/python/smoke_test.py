"""Smoke test for the pairsim_py extension.

Builds the extension with cargo unless PAIRSIM_PY_LIB points at a built
library, imports it and exercises each binding once.
"""

import math
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    lib = os.environ.get("PAIRSIM_PY_LIB")
    if not lib:
        subprocess.run(["cargo", "build", "--release", "-p", "pairsim-py"], cwd=ROOT, check=True)
        lib = os.path.join(ROOT, "target", "release", "libpairsim_py.so")
    where = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(where, "pairsim_py.so"))
    sys.path.insert(0, where)
    import pairsim_py

    return pairsim_py


def main():
    ps = load()
    work = tempfile.mkdtemp()

    dev = ps.Device()
    assert abs(dev.main_fsr_hz / 1e9 - 200) < 2
    assert abs(dev.aux_dip_extinction_db(1543.0) + 0.3) < 0.15
    assert dev.resonance(1543.0)["loaded_q"] > 1e5
    assert abs(ps.lifetime(1e6, 1543.0) * 1e12 - 820) < 5

    src = ps.Source("low-pump-q")
    jta = src.jta()
    assert jta.shape == (512, 512)
    p = jta.purity()
    assert abs(p - 0.985) < 0.01, p
    assert abs(jta.schmidt_number() * p - 1) < 1e-9
    path = os.path.join(work, "jta.jgrd")
    jta.save(path)
    assert abs(ps.JointAmplitude.load(path).purity() - p) < 1e-12

    g2 = ps.g2_two_thermal(0.21, 0.042, 0.987)
    assert 1.69 <= g2 <= 1.75, g2
    a, bs, bi, eta = 0.6, 0.02, 0.03, 0.1
    power = [0.2 * k for k in range(1, 13)]
    clicks_s = [ps.click_probability(eta, math.sinh(a * x) ** 2, bs * x) for x in power]
    clicks_i = [ps.click_probability(eta, math.sinh(a * x) ** 2, bi * x) for x in power]
    fit = ps.fit_power(power, clicks_s, clicks_i, eta, eta)
    assert abs(fit["a"][0] - a) < 1e-5, fit

    tags = os.path.join(work, "tags.ttag")
    n = ps.generate_tags(
        ps.Source("equal-q").jta(), tags, 200_000, seed=3, resonator_mean_pairs=0.2,
        target_heralding_efficiency=0.4, transmittivity=(1.0, 0.5),
    )
    assert n > 0
    r = ps.analyze_tags(tags, 0.85, 0.5, lifetime_s=max(src.lifetimes))
    he, err = r["heralding_efficiency"]
    assert abs(he - 0.4) < 4 * err + 0.02, r
    assert r["regions"]["D"] > r["regions"]["A"]

    try:
        ps.Source("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")

    print(f"ok: purity {p:.4}, g2 {g2:.4}, heralding {he:.3} ± {err:.3}, {n} tags")


if __name__ == "__main__":
    main()
