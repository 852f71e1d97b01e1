# coding: utf-8

# # Label kernels and kernel-weighted contrastive losses
#
# Continuous labels (ages) have no notion of "same class". Instead each pair
# of samples gets a weight in [0, 1] from a kernel on the label difference,
# and the losses use those weights to decide how strongly to pull or push.

# In[1]:

import numpy as np

from kercon import LabelKernel, weight_matrix, cosine_similarity_matrix, project_to_sphere
from kercon.losses import anchor_loss, contrastive_loss, supcon_loss


# ## Kernels
#
# Gaussian ("rbf") and Cauchy kernels both peak at 1 for identical labels.
# The Cauchy tail is much heavier.

# In[2]:

gauss = LabelKernel("rbf", 2.0)
cauchy = LabelKernel("cauchy", 1.0)
for u in [0, 1, 2, 4, 8]:
    print(f"u={u:>2}  rbf(2)={gauss(u):.4f}  cauchy(1)={cauchy(u):.4f}")


# In[3]:

ages = np.array([20.0, 21.0, 25.0, 60.0])
print(weight_matrix(gauss, ages).values.round(3))


# ## One anchor by hand
#
# Two other samples: a positive with weight 1 and similarity 1, and an
# unrelated one with weight 0 and similarity 0.

# In[4]:

for kind in ["yaware", "thr", "exp"]:
    value, grad = anchor_loss(kind, [1.0, 0.0], [1.0, 0.0])
    print(kind, round(value, 6), grad.round(4))


# The threshold loss only repels samples that are strictly less positive
# than the one being aligned. Here `k=1` (w=1) repels `t=2` (w=0.5), while
# `k=2` has nothing below it and is dropped.

# In[5]:

print(anchor_loss("thr", [0.8, 0.2], [1.0, 0.5], "weight")[0])
print(anchor_loss("thr", [0.8, 0.2], [1.0, 0.5], "count")[0])


# ## A batch
#
# Random unit embeddings with temperature 0.1. The y-aware loss with a Delta
# kernel on integer labels is exactly the supervised contrastive loss.

# In[6]:

rng = np.random.default_rng(0)
z = project_to_sphere(rng.normal(size=(6, 3)))
sims = cosine_similarity_matrix(z, 0.1)
y = np.array([30.0, 31.0, 33.0, 50.0, 52.0, 70.0])
w = weight_matrix(gauss, y)
for kind in ["yaware", "exp"]:
    out = contrastive_loss(kind, sims, w)
    print(f"{kind:>6}: {out.value:.4f}  |grad|={np.linalg.norm(out.grad):.3f}")


# The threshold loss divides each term by the summed weight of its
# uniformity set. For the anchor aged 70 the pair (70, 50) has weight about
# 2e-22, and every sample below it is 37+ years away with weight near 1e-75,
# so that coefficient is astronomically large. Normalizing by the set size
# instead keeps it on the same scale as the other losses.

# In[7]:

for mode in ["weight", "count"]:
    out = contrastive_loss("thr", sims, w, thr_normalization=mode)
    print(f"thr/{mode}: {out.value:.4g}")


# In[8]:

classes = np.array([0, 0, 1, 1, 2, 2])
print(contrastive_loss("yaware", sims, weight_matrix(LabelKernel("delta"), classes)).value)
print(supcon_loss(sims, classes).value)
