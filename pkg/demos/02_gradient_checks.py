# coding: utf-8

# # Checking the analytic gradients
#
# Every loss returns d(loss)/dz at the unit embeddings. Training chains this
# through the sphere projection and the encoder. Here both links are checked
# against central differences.

# In[1]:

import numpy as np

from kercon import Encoder, LabelKernel, weight_matrix, cosine_similarity_matrix, project_to_sphere
from kercon.encoder import backward
from kercon.losses import batch_loss, loss_gradient_check


# In[2]:

rng = np.random.default_rng(1)
kernel = LabelKernel("cauchy", 2.0)
for kind in ["yaware", "thr", "exp"]:
    errs = []
    for _ in range(20):
        n = rng.integers(2, 6)
        z = project_to_sphere(rng.normal(size=(n, 3)))
        w = weight_matrix(kernel, rng.uniform(0, 4, n))
        errs.append(loss_gradient_check(kind, cosine_similarity_matrix(z, 0.5), w))
    print(f"{kind:>6}: max relative error {max(errs):.2e}")


# ## Through the encoder
#
# Perturb every weight and bias of a small tanh MLP and compare with the
# backward pass.

# In[3]:

enc = Encoder.init([5, 8, 3], rng)
x = rng.normal(size=(6, 5))
y = rng.uniform(20, 30, 6)
out = batch_loss("exp", enc.embed(x), y, kernel, 0.5)
analytic = backward(enc, x, out.grad)

eps = 1e-6
W = enc.weights[0]
numeric = np.zeros_like(W)
for idx in np.ndindex(*W.shape):
    old = W[idx]
    W[idx] = old + eps
    up = batch_loss("exp", enc.embed(x), y, kernel, 0.5).value
    W[idx] = old - eps
    down = batch_loss("exp", enc.embed(x), y, kernel, 0.5).value
    W[idx] = old
    numeric[idx] = (up - down) / (2 * eps)

print(np.abs(numeric - analytic[0]).max() / np.abs(numeric).max())
