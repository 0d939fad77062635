"""Write the shipped scenario scripts (Table-style paired runs, latency and outage)."""

import json
from pathlib import Path

import numpy as np

from gainrag.kinematics import forward_kinematics, load_model

OUT = Path(__file__).resolve().parents[1] / "src" / "gainrag" / "data" / "scripts"
MODEL = load_model()

# right-arm joint indices: 7 pitch, 8 roll, 9 yaw, 10 elbow, 11-13 wrist
POSTURES = {
    "home": {},
    "wipe_a": {9: 0.35, 10: -1.1},
    "wipe_b": {9: -0.35, 10: -1.1},
    "reach": {7: -0.7, 10: -0.9},
    "extend": {7: -1.1, 10: -0.5},
    "pour": {7: -0.8, 10: -1.0, 12: 0.8},
}


def target(name, t):
    q = MODEL.home.copy()
    for i, v in POSTURES[name].items():
        q[i] = v
    left, right = forward_kinematics(MODEL, q)
    return {"t": t, "event": "set_target", "poses": {"left": left.to_list(), "right": right.to_list()}}


def scene(stub, t):
    return {"t": t, "event": "set_scene", "stub": stub}


def wipe_targets(duration):
    return [target("wipe_a" if i % 2 == 0 else "wipe_b", 1.0 + 2.0 * i) for i in range(int((duration - 1) / 2))]


def merge(*groups):
    return sorted((e for g in groups for e in g), key=lambda e: e["t"])


def paired(task, absent, present, moves):
    base = {"name": task, "duration": 20.0, "timeline": merge([scene(absent, 0.0)], moves)}
    human = {"name": f"{task}_with_hand", "duration": 20.0,
             "timeline": merge([scene(absent, 0.0), scene(present, 5.0), scene(absent, 15.0)], moves)}
    return [base, human]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    pick_moves = [target("reach", 1.0), target("home", 6.0), target("extend", 9.0), target("home", 16.0)]
    scripts = []
    scripts += paired("wipe", "wipe_no_human", "wipe_with_hand", wipe_targets(20.0))
    scripts += paired("pin", "pin_no_human", "pin_with_hand", pick_moves)
    scripts += paired("cube", "cube_no_human", "cube_with_hand", pick_moves)
    scripts.append({"name": "soy_sauce", "duration": 20.0, "timeline": merge(
        [scene("soy_sauce_pick", 0.0), scene("soy_sauce_handover", 6.0), scene("soy_sauce_pour", 13.0)],
        [target("reach", 1.0), target("extend", 6.5), target("pour", 13.5), target("home", 18.0)])})
    scripts.append({"name": "latency_wipe", "duration": 60.0, "timeline": merge(
        [{"t": 0.0, "event": "inject_latency", "latency": 1.4}, scene("wipe_no_human", 0.0),
         scene("wipe_with_hand", 10.02), scene("wipe_no_human", 25.5), scene("wipe_with_hand", 40.3),
         scene("wipe_no_human", 50.0)],
        wipe_targets(60.0))})
    scripts.append({"name": "outage", "duration": 25.0, "timeline": merge(
        [scene("wipe_no_human", 0.0), {"t": 10.0, "event": "drop_connection", "duration": 5.0}],
        wipe_targets(25.0))})
    for s in scripts:
        (OUT / f"{s['name']}.json").write_text(json.dumps(s, indent=1) + "\n")
    print("wrote", ", ".join(s["name"] for s in scripts))


if __name__ == "__main__":
    main()
