"""Print step-refinement ladders for the singular-drift functional and its controls.

Shows the per-halving ratios for the attracting drift, the zero-drift control
and the amplitude-rescaled problems, which collapse onto one ladder.

Usage: python scripts/refinement_ladders.py [--paths 2000] [--levels 7]
"""

import argparse

from sdelab import counterexamples as cx


def show(title, v):
    print(title)
    for (h, val, se), r in zip(v.ladder, [None] + list(v.trend["ratios"])):
        ratio = "" if r is None else f"  ratio {r:.3f}"
        print(f"  h={h:.3e}  value={val:.4f} +- {se:.4f}{ratio}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--levels", type=int, default=7)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()
    ladder = [2.0 ** -(k + 4) for k in range(args.levels)]
    kw = dict(n_paths=args.paths, seed=args.seed)
    show("attracting drift", cx.nonexistence_diagnostic(h_ladder=ladder, **kw))
    show("zero drift", cx.nonexistence_diagnostic(h_ladder=ladder, control=True, **kw))
    inv = cx.eps_invariance((0.25, 0.5, 1.0), 0.5, ladder, **kw)
    print("amplitude rescaling (value / c^(1 - alpha))")
    for eps, vals in inv.trend["rescaled"].items():
        print(f"  eps={eps:5s} " + " ".join(f"{v:.4f}" for v in vals))


if __name__ == "__main__":
    main()
