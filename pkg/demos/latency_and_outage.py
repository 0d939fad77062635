# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
# ---

# %% [markdown]
# # Slow replies and a dropped link
#
# The control loop never waits on the network. It keeps the last accepted
# payload, and once no reply has arrived for the staleness timeout (3 s) it
# slews to the conservative fallback profile.

# %%
import numpy as np

from gainrag.comms import Pipeline
from gainrag.impedance import fallback_payload
from gainrag.scenario_db import load_default_database
from gainrag.sim import SimConfig, analyze, format_report, load_script, run_scenario

pipe = Pipeline(load_default_database())

# %% [markdown]
# ## 1.4 s reply latency
#
# Every scene change still lands within latency + one query period + slew.

# %%
lat = analyze(run_scenario(load_script("latency_wipe"), SimConfig(), pipe))
print(format_report(lat))
print(f"bound: {1.4 + 1.0 + 0.3:.1f} s")

# %% [markdown]
# ## Link outage
#
# At the drop the client stops receiving replies. The reason column in the
# log switches to `stale` and the gains head to the fallback profile.

# %%
log = run_scenario(load_script("outage"), SimConfig(), pipe)
drop = next(t for t, label in log.events if label.startswith("drop_connection"))
fb = np.array(fallback_payload().kp)
hit = next(t for t, kp in zip(log.t, log.kp) if t >= drop and np.array_equal(kp, fb))
print(f"link dropped at {drop:.2f} s, fallback reached at {hit:.2f} s ({hit - drop:.2f} s later)")

for t in np.arange(drop - 1, drop + 8, 1.0):
    k = min(int(np.searchsorted(log.t, t)), len(log.t) - 1)
    print(f"t={log.t[k]:5.2f}  reason={log.reason[k]:15s} kp[0]={log.kp[k, 0]:5.1f}")
