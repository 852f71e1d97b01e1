# coding: utf-8

# # Ablation grid and baseline comparison
#
# The experiment layer wraps everything above: configs are JSON, every run is
# stored under runs/<config hash>/, and finished cells are reused on rerun.
# The same functions back the `kercon ablate` and `kercon compare` commands.

# In[1]:

import tempfile
from pathlib import Path

from kercon.experiment import AblationGrid, run_ablation, run_comparison

out = Path(tempfile.mkdtemp(prefix="kercon-demo-"))
small = {"n_train": 300, "n_internal_test": 100, "n_external_test": 100, "seed": 0}


# In[2]:

grid = AblationGrid(
    kernels=[{"kernel": "cauchy", "bandwidth": 1.0}, {"kernel": "rbf", "bandwidth": 2.0}],
    losses=["yaware", "thr", "exp"],
    seeds=[0, 1],
    base={"data": small, "train": {"epochs": 10}},
)
res = run_ablation(grid, out / "ablation")
print((out / "ablation" / "ablation_table.txt").read_text())


# Running it again touches nothing: every cell's result.json already exists.

# In[3]:

again = run_ablation(grid, out / "ablation")
print(again["rows"] == res["rows"])


# In[4]:

baseline = {"name": "baseline_l1", "data": small, "train": {"loss": "l1", "epochs": 10}}
contrastive = {"name": "exp", "data": small, "train": {"loss": "exp", "epochs": 10}}
cmp = run_comparison([baseline, contrastive], out / "compare", seeds=[0, 1, 2])
for row in cmp["table"]:
    print(row)
print(cmp["verdicts"]["methods"]["exp"])
