"""Write the FK golden file.

Zero-angle poses are composed by summing the model's frame offsets directly
(all joint rotations are identity there), independent of the FK code. The
home-posture poses are a frozen regression snapshot of FK.
"""

import json
from pathlib import Path

import numpy as np

from gainrag.kinematics import forward_kinematics, load_model

DATA = Path(__file__).resolve().parents[1] / "src" / "gainrag" / "data"


def main():
    doc = json.loads((DATA / "arm_model.json").read_text())
    golden = {"zero": {}, "home": {}}
    for side in ("left", "right"):
        chain = doc["chains"][side]
        pos = np.sum([j["offset"] for j in chain["joints"]], axis=0) + np.asarray(chain["tool"])
        golden["zero"][side] = pos.tolist() + [0.0, 0.0, 0.0, 1.0]
    model = load_model(DATA / "arm_model.json")
    for side, pose in zip(("left", "right"), forward_kinematics(model, model.home)):
        golden["home"][side] = pose.to_list()
    golden["home_q"] = model.home.tolist()
    (DATA / "golden_poses.json").write_text(json.dumps(golden, indent=2) + "\n")


if __name__ == "__main__":
    main()
