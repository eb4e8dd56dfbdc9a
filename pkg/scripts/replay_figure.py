"""Replay frames for odor-B trials: JSONL, an occupancy table and one SVG per window.

    python scripts/replay_figure.py --seed 0 --inject --out results/replay
"""

import argparse
from pathlib import Path

from dppvae import data, evaluation, experiments, models


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--prior", choices=["normal", "dpp"], default="dpp")
    p.add_argument("--inject", action="store_true", help="plant a B->C replay in [0.6, 0.9] s")
    p.add_argument("--grid-size", type=int, default=200)
    p.add_argument("--out", default="results/replay")
    args = p.parse_args(argv)

    injection = data.ReplayInjection() if args.inject else None
    windows = data.replay_windows()
    if injection is not None:
        windows = windows + [injection.window]
    frames = experiments.run_replay(
        data.SpikeSimConfig(seed=args.seed, replay_injection=injection),
        experiments.ModelConfig(prior=args.prior),
        models.TrainConfig(epochs=args.epochs, seed=args.seed),
        args.seed,
        test_windows=windows,
        grid_size=args.grid_size,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "frames.jsonl").write_text(evaluation.frames_to_jsonl(frames))
    print(f"{'window':>12} " + " ".join(f"{o:>5}" for o in data.ODORS))
    for i, f in enumerate(frames):
        (out / f"frame_{i:02d}.svg").write_text(evaluation.frame_to_svg(f))
        print(f"{data.window_key(f.window):>12} " + " ".join(f"{f.class_occupancy[o]:5.2f}" for o in data.ODORS))
    print(f"wrote {len(frames)} frames to {out}")


if __name__ == "__main__":
    main()
