"""Generate a pseudo-history observations CSV by simulating a deck.

The deck you pass is the hidden truth: run it through the proxy
simulator, optionally add relative noise, and write the result in the
observations CSV format. Matching a perturbed copy of the same deck
against this file is the standard synthetic experiment.
"""

import argparse
import sys
from pathlib import Path

from petromatch.misfit import dump_history_csv
from petromatch.simulator import make_pseudo_history


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("deck", help="truth deck to simulate")
    parser.add_argument("--noise", type=float, default=0.0,
                        help="relative noise level, e.g. 0.02 (default 0)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="output CSV (default: stdout)")
    args = parser.parse_args(argv)

    text = Path(args.deck).read_text()
    history = make_pseudo_history(text, noise_rel=args.noise, seed=args.seed)
    csv_text = dump_history_csv(history)
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"{len(history.times)} timesteps, "
              f"{len(history.series)} series -> {args.out}")
    else:
        sys.stdout.write(csv_text)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
