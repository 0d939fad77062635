# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # From a scene to a gain payload
#
# A mock VLM turns a named scene into a structured descriptor. The descriptor
# is normalized into canonical query text, embedded, and matched against the
# 16 stored scenarios. Safety guards run on the way out.

# %%
from gainrag.comms import Pipeline
from gainrag.embedding import embed
from gainrag.perception import MockVLMClient, normalize, to_query_text
from gainrag.retrieval import build_index, retrieve
from gainrag.scenario_db import category_counts, load_default_database

db = load_default_database()
print(len(db), "scenarios")
for field, counts in category_counts(db).items():
    print(f"  {field}: {counts}")

# %% [markdown]
# ## One scene, step by step

# %%
vlm = MockVLMClient()
raw = vlm.describe("wipe_with_hand")
text = to_query_text(normalize(raw))
print(text)

# %%
index = build_index(db)
hit = retrieve(index, embed(text))
print(hit.kind, hit.reason, db[hit.record_index].scenario_id if hit.record_index is not None else None,
      f"{hit.distance:.4f}")
for i, d in hit.candidates:
    print(f"  {db[i].scenario_id:28s} {d:.4f}")

# %% [markdown]
# ## Whole pipeline for every mock scene
#
# `reason` is `ok` for a clean match. Fallback scenes get the conservative
# profile (Kp 10, Kd 2, slow).

# %%
pipe = Pipeline(db)
for stub in sorted(vlm.stubs):
    out = pipe.process({"stub": stub})
    p = out.payload
    print(f"{stub:32s} {p.reason:8s} {p.scenario_id or '-':32s} Kp[0]={p.kp[0]:5.1f} v={p.nominal_v}")
