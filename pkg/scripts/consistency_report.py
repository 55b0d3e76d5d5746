"""Warped consistency of plain and stylized orbits across trade-off values.

    python3 scripts/consistency_report.py runs/fit/checkpoint.vxs --alphas 0 0.5 1
"""

import argparse
from pathlib import Path

from voxelstyle.artifacts import posed
from voxelstyle.checkpoint import load_checkpoint
from voxelstyle.consistency import consistency_score, format_report
from voxelstyle.radiance_model import BranchId
from voxelstyle.style_builder import orbit_poses
from voxelstyle.stylizer import Direction, StyleBlend, VoxelGridSpec, compute_moments_pair, render_stylized
from voxelstyle.volume_renderer import RenderConfig, render_image


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint", type=Path)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.5, 1.0])
    ap.add_argument("--direction", default="content-to-style", choices=[d.value for d in Direction])
    ap.add_argument("--views", type=int, default=20)
    ap.add_argument("--step", type=float, default=5.0, help="orbit azimuth step, degrees")
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--voxel-res", type=int, default=128)
    ap.add_argument("--gaps", type=int, nargs="+", default=[5, 15])
    args = ap.parse_args()

    model = load_checkpoint(args.checkpoint)
    direction = Direction(args.direction)
    cams = orbit_poses(args.views, 2.0, step_deg=args.step, width=args.resolution)
    cfg = RenderConfig(n_samples=args.samples)
    moments = compute_moments_pair(model, VoxelGridSpec(args.voxel_res))

    plain = posed(cams, [render_image(model, BranchId(direction.source), c, cfg) for c in cams])
    print(format_report(consistency_score(plain, args.gaps), title="unstylized"))
    for alpha in args.alphas:
        blend = StyleBlend(alpha, direction)
        seq = posed(cams, [render_stylized(model, c, blend, moments, cfg) for c in cams])
        print(format_report(consistency_score(seq, args.gaps), title=f"{direction.value} alpha={alpha}"))


if __name__ == "__main__":
    main()
