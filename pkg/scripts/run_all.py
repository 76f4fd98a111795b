"""Run every registered scenario under every controller it supports.

Writes one CSV log and one summary per run into ``--out`` and prints a
table of verdicts. Exit status is 0 only when every filtered run is safe.
"""

import argparse
import dataclasses
import json
from pathlib import Path

from cbfsynth import scenarios
from cbfsynth.cli import CliConfig, execute


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/run_all")
    ap.add_argument("--duration", type=float, default=None, help="override every scenario's duration")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows, ok = [], True
    for name in scenarios.names():
        sc = scenarios.build(name)
        run = sc.run if args.duration is None else dataclasses.replace(sc.run, duration=args.duration)
        for ctrl in scenarios.entry(name).controllers:
            cfg = CliConfig(name, ctrl, {}, run, str(out))
            s = execute(cfg, out / f"{name}__{ctrl}.csv")
            (out / f"{name}__{ctrl}.summary.json").write_text(json.dumps(s, indent=2, default=float))
            rows.append((name, ctrl, min(s["min_h"]), s["safe"], s["runtime_s"]))
            if ctrl != "nominal":
                ok &= s["safe"]

    print(f"{'scenario':<14} {'controller':<14} {'min h':>12}  {'safe':<5} {'runtime':>8}")
    for name, ctrl, mh, safe, rt in rows:
        print(f"{name:<14} {ctrl:<14} {mh:>12.4g}  {str(safe):<5} {rt:>7.1f}s")
    return 0 if ok else 2


if __name__ == "__main__":
    raise SystemExit(main())
