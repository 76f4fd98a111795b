"""Export barrier traces, exponential bounds and the Segway angle as small CSV files.

* ``stones_barriers.csv``: t, h1, h2 and their exponential lower bounds
  under the CLF-ECBF QP.
* ``acc_lk_barriers.csv``: t, h_asr, h_lk, gap/speed under the CLF-CBF QP.
* ``segway_angle.csv``: t, phi without and with the filter, plus the limit.
"""

import argparse
from pathlib import Path

import numpy as np

from cbfsynth import scenarios
from cbfsynth.ecbf import eta_b
from cbfsynth.scenarios import acc_lk, segway
from cbfsynth.sim import run_closed_loop


def save(path, header, cols):
    np.savetxt(path, np.column_stack(cols), delimiter=",", fmt="%.10g", header=header, comments="")
    print(f"wrote {path}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/figures")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sc = scenarios.build("stones")
    log = run_closed_loop(sc, "clf_ecbf_qp")
    bounds = []
    for d in sc.ecbf_designs:
        eta0 = eta_b(d.chain, log.x[0])
        bounds.append([d.lower_bound(eta0, t) for t in log.t])
    save(out / "stones_barriers.csv", "t,h1,h2,bound1,bound2", [log.t, log.h[:, 0], log.h[:, 1], *bounds])

    sc = scenarios.build("acc_lk")
    log = run_closed_loop(sc, "clf_cbf_qp")
    gap = log.x[:, acc_lk.XL] - log.x[:, acc_lk.PX]
    headway = gap / np.maximum(log.x[:, acc_lk.V], 1e-9)
    save(out / "acc_lk_barriers.csv", "t,h_asr,h_lk,headway", [log.t, log.h[:, 0], log.h[:, 1], headway])

    sc = scenarios.build("segway_lite")
    off = run_closed_loop(sc, "nominal")
    on = run_closed_loop(sc, "safety_filter")
    n = min(len(off), len(on))
    save(out / "segway_angle.csv", "t,phi_nominal,phi_filtered,phi_max",
         [on.t[:n], off.x[:n, 1], on.x[:n, 1], np.full(n, segway.PHI_MAX)])


if __name__ == "__main__":
    main()
