"""Run every scenario at one seed and print each assertion summary.

    python3 scripts/run_all_scenarios.py [--seed N] [--out DIR]

With ``--out`` each transcript is written to ``DIR/<name>.jsonl``.
"""

import argparse
import sys
from pathlib import Path

from ofkit.sim import SCENARIO_NAMES, run_scenario


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
    failed = []
    for name in SCENARIO_NAMES:
        res = run_scenario(name, args.seed)
        print(res.report())
        if args.out:
            (args.out / f"{name}.jsonl").write_text(res.transcript_text())
        if not res.ok:
            failed.append(name)
    # the strict counterpart of the distant-duplicate run
    res = run_scenario("distant_duplicate", args.seed, {"strict": True})
    print(res.report().replace("distant_duplicate", "distant_duplicate (strict)", 1))
    if not res.ok:
        failed.append("distant_duplicate/strict")
    print(f"\n{len(SCENARIO_NAMES) + 1 - len(failed)} passed, {len(failed)} failed {failed or ''}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
