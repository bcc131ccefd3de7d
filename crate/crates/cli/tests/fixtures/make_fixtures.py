#!/usr/bin/env python3
"""Writes the walkway fixtures and the golden `analyze --json` output.

The metrics are recomputed here by brute force, independently of the Rust
code. Rerun from this directory: python3 make_fixtures.py
"""
import json
import math
import random

PLACEMENT = "BelowKnee"


def make_trial(seed, n):
    rng = random.Random(seed)
    side = "Left"
    t, x = 0.8 + rng.uniform(0, 0.2), 0.6 + rng.uniform(0, 0.1)
    footfalls = []
    for i in range(n):
        if i > 0:
            side = "Right" if side == "Left" else "Left"
            # Prosthetic (right) steps are shorter in time and length.
            t += rng.uniform(0.58, 0.62) if side == "Right" else rng.uniform(0.66, 0.70)
            x += rng.uniform(0.60, 0.64) if side == "Right" else rng.uniform(0.68, 0.72)
        stance = rng.uniform(0.74, 0.80) if side == "Left" else rng.uniform(0.70, 0.74)
        y = -0.055 + rng.uniform(-0.01, 0.01) if side == "Left" else 0.065 + rng.uniform(-0.01, 0.01)
        footfalls.append((t, t + stance, x, y, side))
    return footfalls


def mean_sd(values):
    m = sum(values) / len(values)
    return {"mean": m, "sd": math.sqrt(sum((v - m) ** 2 for v in values) / len(values))}


def limb(ff, side):
    own = [f for f in ff if f[4] == side]
    step_time, step_length, step_width, stance = [], [], [], []
    for f in own:
        earlier = [g for g in ff if g[0] < f[0]]
        if earlier:
            prev = max(earlier, key=lambda g: g[0])
            if prev[4] != side:
                step_time.append(f[0] - prev[0])
                step_length.append(f[2] - prev[2])
                step_width.append(abs(f[3] - prev[3]))
        later = [g for g in own if g[0] > f[0]]
        if later:
            nxt = min(later, key=lambda g: g[0])
            stance.append((f[1] - f[0]) / (nxt[0] - f[0]) * 100.0)
    return {
        "footfalls": len(own),
        "step_time": mean_sd(step_time),
        "step_length": mean_sd(step_length),
        "swing_pct": mean_sd([100.0 - s for s in stance]),
        "stance_pct": mean_sd(stance),
        "step_width": mean_sd(step_width),
    }


def si(a, b):
    return min(a, b) / max(a, b)


def metrics(ff):
    left, right = limb(ff, "Left"), limb(ff, "Right")
    first, last = min(ff, key=lambda f: f[0]), max(ff, key=lambda f: f[0])
    dt = last[0] - first[0]
    keys = ["step_time", "step_length", "swing_pct", "stance_pct", "step_width"]
    return {
        "participant": "TF01",
        "speed": (last[2] - first[2]) / dt,
        "cadence": (len(ff) - 1) * 60.0 / dt,
        "left": left,
        "right": right,
        "symmetry": {k: si(left[k]["mean"], right[k]["mean"]) for k in keys},
    }


def write_walkway(path, ff):
    with open(path, "w") as out:
        out.write(f"# kneesim walkway v1 placement={PLACEMENT}\n")
        out.write("t_contact,t_liftoff,x,y,side\n")
        for f in ff:
            out.write(",".join(repr(v) for v in f[:4]) + f",{f[4]}\n")


def main():
    trials = [make_trial(11, 12), make_trial(12, 10)]
    for i, ff in enumerate(trials, 1):
        write_walkway(f"walkway_trial{i}.csv", ff)
    per_trial = [metrics(ff) for ff in trials]
    keys = ["step_time", "step_length", "swing_pct", "stance_pct", "step_width"]
    golden = {
        "trials": per_trial,
        "summary": {
            "participant": "TF01",
            "placement": PLACEMENT,
            "condition": "self-selected",
            "trials": len(per_trial),
            "speed": mean_sd([m["speed"] for m in per_trial]),
            "cadence": mean_sd([m["cadence"] for m in per_trial]),
            "symmetry": {k: sum(m["symmetry"][k] for m in per_trial) / len(per_trial) for k in keys},
        },
        "kinematics": None,
    }
    with open("golden_analyze.json", "w") as out:
        json.dump(golden, out, indent=2)
        out.write("\n")
    with open("walkway_empty.csv", "w") as out:
        out.write(f"# kneesim walkway v1 placement={PLACEMENT}\n")
        out.write("t_contact,t_liftoff,x,y,side\n")


if __name__ == "__main__":
    main()
