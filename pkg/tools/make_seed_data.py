"""Regenerate the shipped seed database and mock scene table.

The 16 scenarios are synthetic: they reproduce the published category counts
and gain ranges, and order gains so that hand-visible rows are never stiffer
or less damped than hand-free rows on any joint. Descriptions are produced
with ``to_query_text(normalize(descriptor))`` so self-retrieval is exact.

    python tools/make_seed_data.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from gainrag.perception import normalize, parse_descriptor, to_query_text
from gainrag.scenario_db import GainSet, ScenarioRecord, save_database, validate_record

DATA = Path(__file__).resolve().parents[1] / "src" / "gainrag" / "data"

# per-joint multipliers, left arm then right arm (shoulder pitch .. wrist yaw)
KP_SHAPE = np.array([1.0, 0.95, 0.8, 0.9, 0.6, 0.5, 0.5, 1.0, 0.95, 0.8, 0.92, 0.62, 0.52, 0.5])
KD_SHAPE = np.array([1.0, 1.0, 0.9, 0.9, 0.7, 0.6, 0.6, 1.0, 1.0, 0.9, 0.92, 0.7, 0.62, 0.6])


def desc(task, obj, fragility, human, n_obs, obs, workspace, posture, loc, spacing, complexity, conf):
    return {
        "task_type": task, "main_object": obj, "object_fragility": fragility, "human_presence": human,
        "obstacle_count": n_obs, "obstacle_type": obs, "workspace_condition": workspace,
        "arm_posture": posture, "object_location": loc, "spacing": spacing, "complexity": complexity,
        "confidence": conf,
    }


# (scenario_id, nominal_v, base Kp, base Kd, raw descriptor)
ROWS = [
    ("g1_01_pick_cube_table", "normal", 55.0, 0.70,
     desc("pick", "cube", "non fragile", "none", 0, "none", "clear table", "right arm reaching forward",
          "center", "wide", "simple", 0.9)),
    ("g1_02_pick_sponge_hand_near", "slow", 21.0, 1.65,
     desc("pick", "sponge", "non fragile", "hand visible near sponge", 1, "human hand", "cluttered table",
          "right arm reaching forward", "right", "narrow", "moderate", 0.85)),
    ("g1_03_handover_cube", "slow", 20.0, 1.70,
     desc("handover", "cube", "non fragile", "hand visible", 1, "human hand", "clear table",
          "right arm extended toward human", "center", "narrow", "moderate", 0.9)),
    ("g1_04_pick_cube_put_in_a_box", "normal", 50.0, 0.75,
     desc("pick and place", "cube", "non fragile", "none", 1, "box", "clear table",
          "right arm reaching forward", "left", "wide", "simple", 0.9)),
    ("g1_05_pick_apple", "mid", 42.0, 0.80,
     desc("pick", "apple", "non fragile", "none", 0, "none", "clear table", "left arm reaching forward",
          "left", "wide", "simple", 0.88)),
    ("g1_06_pick_banana_hand_near", "slow", 18.0, 1.85,
     desc("pick", "banana", "fragile", "hand visible beside fruit", 1, "human hand", "clear table",
          "left arm reaching forward", "center", "narrow", "precision required", 0.8)),
    ("g1_07_handover_orange", "slow", 18.5, 1.90,
     desc("handover", "orange", "fragile", "human hand open", 1, "human hand", "clear table",
          "left arm extended toward human", "center", "narrow", "precision required", 0.85)),
    ("g1_08_pick_soy_sauce_bottle", "mid", 30.0, 0.95,
     desc("pick", "soy sauce bottle", "fragile liquid", "none", 1, "cup", "clear table",
          "right arm reaching forward", "right", "moderate", "precision required", 0.9)),
    ("g1_09_handover_soy_sauce_bottle", "slow", 19.0, 2.00,
     desc("handover", "soy sauce bottle", "fragile liquid", "hand visible holding cup", 2, "human hand and cup",
          "clear table", "right arm extended toward human", "center", "narrow", "precision required", 0.9)),
    ("g1_10_pour_soy_sauce", "mid", 28.0, 1.00,
     desc("pour", "soy sauce bottle", "fragile liquid", "none", 1, "cup", "clear table",
          "right arm tilted over cup", "center", "moderate", "precision required", 0.9)),
    ("g1_11_wipe_surface", "normal", 60.0, 0.60,
     desc("wipe", "sponge", "non fragile", "none", 0, "none", "clear table", "right arm pressing down",
          "center", "wide", "simple", 0.9)),
    ("g1_12_wipe_near_hand", "slow", 22.0, 1.60,
     desc("wipe", "sponge", "non fragile", "hand visible on table", 1, "human hand", "clear table",
          "right arm pressing down", "center", "narrow", "moderate", 0.9)),
    ("g1_13_pick_glass_cup", "slow", 26.0, 0.98,
     desc("pick", "glass cup", "fragile", "none", 0, "none", "clear table", "right arm reaching forward",
          "right", "wide", "precision required", 0.88)),
    ("g1_14_pick_small_tool", "normal", 45.0, 0.72,
     desc("pick", "small tool", "non fragile", "none", 0, "none", "clear table", "right arm reaching forward",
          "center", "wide", "precision required", 0.85)),
    ("g1_15_handover_small_tool", "slow", 20.5, 1.75,
     desc("handover", "small tool", "non fragile", "hand visible open palm", 1, "human hand", "clear table",
          "right arm extended toward human", "center", "narrow", "precision required", 0.85)),
    ("g1_16_pick_box", "normal", 48.0, 0.65,
     desc("pick", "cardboard box", "non fragile", "none", 0, "none", "clear table", "both arms reaching forward",
          "center", "wide", "simple", 0.9)),
]

# named scenes driving the demonstration scripts
SCENES = {
    "wipe_no_human": "g1_11_wipe_surface",
    "wipe_with_hand": "g1_12_wipe_near_hand",
    "cube_no_human": "g1_04_pick_cube_put_in_a_box",
    "cube_with_hand": "g1_03_handover_cube",
    "soy_sauce_pick": "g1_08_pick_soy_sauce_bottle",
    "soy_sauce_handover": "g1_09_handover_soy_sauce_bottle",
    "soy_sauce_pour": "g1_10_pour_soy_sauce",
}
# object absent from the database
OOD_SCENES = {
    "pin_no_human": desc("pick", "pin", "non fragile", "none", 0, "none", "clear table",
                         "right arm reaching forward", "center", "wide", "precision required", 0.8),
    "pin_with_hand": desc("handover", "pin", "non fragile", "hand visible open palm", 1, "human hand",
                          "clear table", "right arm extended toward human", "center", "narrow",
                          "precision required", 0.8),
}


def build():
    records = []
    scenes = {}
    for sid, v, kp, kd, d in ROWS:
        gains = GainSet(
            kp=np.round(np.clip(kp * KP_SHAPE, 10.0, 60.0), 2).tolist(),
            kd=np.round(np.clip(kd * KD_SHAPE, 0.1, 2.0), 3).tolist(),
        )
        n = normalize(parse_descriptor(d))
        rec = ScenarioRecord(sid, n.task_enum, n.main_object, n.object_fragility, n.human_presence, v, gains,
                             to_query_text(n))
        assert not validate_record(rec), validate_record(rec)
        records.append(rec)
        scenes[sid] = d
    by_id = {sid: d for sid, *_, d in ROWS}
    for name, sid in SCENES.items():
        scenes[name] = by_id[sid]
    scenes.update(OOD_SCENES)
    return records, scenes


def main():
    records, scenes = build()
    save_database(records, DATA / "scenarios.csv")
    with open(DATA / "mock_scenes.json", "w", encoding="utf-8") as fh:
        json.dump({"scenes": scenes}, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(records)} records and {len(scenes)} scenes")


if __name__ == "__main__":
    main()
