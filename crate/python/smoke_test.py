"""Smoke test for the geodid extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`
or `pip install --no-build-isolation ./crates/py`.
"""

import math
import sys
import tempfile
from pathlib import Path

import geodid


def check(cond, msg):
    if not cond:
        sys.exit(f"FAIL: {msg}")
    print(f"ok: {msg}")


def main():
    w = geodid.linear_kernel([0.0, 100.0, 300.0], 400.0)
    check(w == [1.0, 0.75, 0.0], "linear kernel closed form")
    g = geodid.gaussian_kernel([0.0, 10.0, 20.0], 10.0)
    check(abs(g[1] - math.exp(-1)) < 1e-12 and abs(g[2] - math.exp(-4)) < 1e-12, "gaussian kernel closed form")

    panel, truth = geodid.simulate(seed=3, preset="dynamic")
    check(panel.n_units == 500 and panel.n_periods == 10, f"simulated {panel!r}")
    study = geodid.event_study(panel, bootstrap_reps=199, seed=1)
    post = {e["event_time"]: e for e in study["estimates"] if e["event_time"] >= 0}
    worst = max(abs(post[e]["att"] - truth["att_by_e"][str(e)]) for e in post)
    check(worst < 0.03, f"event study tracks planted effects (max gap {worst:.4f})")
    inf = post[0]["inference"]
    check(inf["ci_low"] <= post[0]["att"] <= inf["ci_high"], "bootstrap interval brackets the estimate")
    again = geodid.event_study(panel, bootstrap_reps=199, seed=1)
    check(again == study, "bootstrap is reproducible under a fixed seed")
    try:
        geodid.event_study(panel, bootstrap_reps=10)
        check(False, "missing seed rejected")
    except ValueError:
        check(True, "missing seed rejected")

    panel, truth = geodid.simulate(seed=4, preset="two-region", n_units=400)
    lin, _ = geodid.local_field(panel, kernel="linear")
    gau, h = geodid.local_field(panel, kernel="gaussian", bandwidth="auto", jobs=2)
    check(h is not None and h > 0, f"bandwidth selected by cross-validation (h = {h:.1f} km)")
    r = geodid.robustness(lin, gau)["correlation"]
    check(r > 0.7, f"linear vs gaussian correlation {r:.3f}")

    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "field.csv")
        lin.to_csv(path)
        back = geodid.LocalField.from_csv(path)
        check(back.post_avg() == lin.post_avg(), "field CSV round trip")
        ppath = str(Path(d) / "panel.csv")
        panel.to_csv(ppath)
        check(geodid.Panel.from_csv(ppath).unit_ids() == panel.unit_ids(), "panel CSV round trip")

    field, planted = geodid.trajectory_families(seed=5)
    report = geodid.cluster(field, seed=5, select_k=[2, 3, 4, 5])
    ari = geodid.adjusted_rand_index(planted, report["model"]["labels"])
    check(report["model"]["k"] == 3 and ari > 0.9, f"planted families recovered (ARI {ari:.3f})")
    print("smoke test passed")


if __name__ == "__main__":
    main()
