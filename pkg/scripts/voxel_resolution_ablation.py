"""Compare voxel-grid feature moments across grid resolutions for a trained checkpoint.

    python3 scripts/voxel_resolution_ablation.py runs/fit/checkpoint.vxs --res 32 64 128 256
"""

import argparse
import time
from pathlib import Path

import numpy as np

from voxelstyle.checkpoint import load_checkpoint
from voxelstyle.radiance_model import BRANCHES
from voxelstyle.stylizer import VoxelGridSpec, voxel_moments


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint", type=Path)
    ap.add_argument("--res", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--density-mask", type=float, default=None)
    args = ap.parse_args()

    model = load_checkpoint(args.checkpoint)
    finest = max(args.res)
    for branch in BRANCHES:
        results = {}
        for res in sorted(args.res):
            t = time.perf_counter()
            results[res] = voxel_moments(model, branch, VoxelGridSpec(res), args.density_mask)
            print(f"{branch.value} N_V={res}: {time.perf_counter() - t:.1f} s")
        ref = results[finest]
        print(f"\n{branch.value}: max per-channel change relative to sigma at N_V={finest}")
        print(f"{'N_V':>6} {'d_mu':>10} {'d_sigma':>10}")
        for res, m in results.items():
            d_mu = np.max(np.abs(m.mu - ref.mu) / ref.sigma)
            d_sigma = np.max(np.abs(m.sigma - ref.sigma) / ref.sigma)
            print(f"{res:>6} {d_mu:>10.4f} {d_sigma:>10.4f}")
        print()


if __name__ == "__main__":
    main()
