"""Pivot calibration error against tracker noise.

For each marker translation noise level, run many seeds and report the median
rms_3d and tip error. Rotation noise can be added with --rot-sigma.
"""
import argparse

import numpy as np

from endodepth.calibration import pivot_calibrate
from endodepth.scene import perturb_pose, pivot_poses


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.0, 0.05, 0.1, 0.2, 0.4])
    ap.add_argument("--rot-sigma", type=float, default=0.0, help="degrees")
    ap.add_argument("--poses", type=int, default=500)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--coverage", type=float, nargs=2, default=[60.0, 55.0])
    args = ap.parse_args()

    tip = np.array([0.0, 0.0, -150.0])
    pivot = np.array([60.0, -40.0, 0.0])
    print(f"{'sigma_mm':>9} {'rms_3d':>9} {'max_err':>9} {'tip_err':>9} {'major':>7} {'minor':>7}")
    for sigma in args.sigmas:
        rows = []
        for seed in range(args.seeds):
            rng = np.random.default_rng(seed)
            poses = [perturb_pose(rng, p, sigma, args.rot_sigma)
                     for p in pivot_poses(rng, args.poses, tip, pivot, args.coverage)]
            res = pivot_calibrate(poses)
            rows.append([res.rms_3d, res.max_error, np.linalg.norm(res.tip_offset - tip),
                         res.major_angle, res.minor_angle])
        med = np.median(np.array(rows), axis=0)
        print(f"{sigma:9.3f} {med[0]:9.4f} {med[1]:9.4f} {med[2]:9.4f} {med[3]:7.2f} {med[4]:7.2f}")


if __name__ == "__main__":
    main()
