#!/usr/bin/env python3
"""Regenerates the robot description fixtures under data/robots/.

Link sample points are laid along each link's centerline (standard DH
segments d then a) at roughly 4 cm spacing and expressed in the link's own
frame, so FK of the sample points is reproducible from the JSON alone.
"""
import json
import math
import pathlib

import numpy as np

SPACING = 0.04


def dh(a, d, alpha, theta):
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def segment(p0, p1, include_start):
    length = float(np.linalg.norm(p1 - p0))
    n = max(1, int(math.ceil(length / SPACING)))
    start = 0 if include_start else 1
    return [p0 + (p1 - p0) * (k / n) for k in range(start, n + 1)] if length > 1e-12 else []


def link_points(joints, extra):
    frames = [np.eye(4)]
    for j in joints:
        frames.append(frames[-1] @ dh(j["a"], j["d"], j["alpha"], j["theta_offset"]))
    out = []
    for i, j in enumerate(joints):
        prev = frames[i]
        mid = prev @ dh(0.0, j["d"], 0.0, j["theta_offset"])
        pts = segment(prev[:3, 3], mid[:3, 3], include_start=(i == 0))
        pts += segment(mid[:3, 3], frames[i + 1][:3, 3], include_start=not pts)
        inv = np.linalg.inv(frames[i + 1])
        local = [(inv @ np.append(p, 1.0))[:3] for p in pts]
        local += [np.array(p) for p in extra.get(i, [])]
        if not local:
            local = [np.zeros(3)]
        out.append([[round(float(c), 6) + 0.0 for c in p] for p in local])
    return out


def write(path, name, joints, extra=None):
    desc = {
        "name": name,
        "dof": len(joints),
        "joints": joints,
        "link_points": link_points(joints, extra or {}),
    }
    pathlib.Path(path).write_text(json.dumps(desc, indent=2) + "\n")


def main():
    root = pathlib.Path(__file__).resolve().parent.parent / "data" / "robots"
    hp = math.pi / 2
    lim = 2.8973
    panda = [
        dict(a=0.0, d=0.333, alpha=-hp, theta_offset=0.0, limit_lo=-lim, limit_hi=lim),
        dict(a=0.0, d=0.0, alpha=hp, theta_offset=0.0, limit_lo=-1.7628, limit_hi=1.7628),
        dict(a=0.0825, d=0.316, alpha=hp, theta_offset=0.0, limit_lo=-lim, limit_hi=lim),
        dict(a=-0.0825, d=0.0, alpha=-hp, theta_offset=0.0, limit_lo=-3.0718, limit_hi=3.0718),
        dict(a=0.0, d=0.384, alpha=hp, theta_offset=0.0, limit_lo=-lim, limit_hi=lim),
        dict(a=0.088, d=0.0, alpha=hp, theta_offset=0.0, limit_lo=-0.0175, limit_hi=3.7525),
        dict(a=0.0, d=0.107, alpha=0.0, theta_offset=0.0, limit_lo=-lim, limit_hi=lim),
    ]
    # Hand and fingers hang off the flange frame.
    c = 0.04 * math.cos(math.pi / 4)
    hand = [[0.0, 0.0, 0.04], [0.0, 0.0, 0.08], [0.0, 0.0, 0.1034],
            [c, -c, 0.1034], [-c, c, 0.1034], [c, -c, 0.1584], [-c, c, 0.1584]]
    write(root / "panda_like.json", "panda_like", panda, {6: hand})

    planar = [
        dict(a=1.0, d=0.0, alpha=0.0, theta_offset=0.0, limit_lo=-math.pi, limit_hi=math.pi),
        dict(a=1.0, d=0.0, alpha=0.0, theta_offset=0.0, limit_lo=-math.pi, limit_hi=math.pi),
    ]
    desc = {
        "name": "planar2",
        "dof": 2,
        "joints": planar,
        "link_points": [[[0.0, 0.0, 0.0]], [[0.0, 0.0, 0.0]]],
    }
    (root / "planar2.json").write_text(json.dumps(desc, indent=2) + "\n")


if __name__ == "__main__":
    main()
