import numpy as np
import pytest

from kercon.kernels import LabelKernel, weight_matrix
from kercon.similarity import cosine_similarity_matrix, project_to_sphere

KERNELS = [
    LabelKernel("rbf", 1.0),
    LabelKernel("rbf", 2.0),
    LabelKernel("cauchy", 1.0),
    LabelKernel("cauchy", 2.0),
]


def random_batch(rng, n=None, d=None, temperature=None, kernel=None, label_scale=3.0):
    """Unit embeddings, labels, similarity matrix and weights for one batch."""
    n = n or int(rng.integers(2, 6))
    d = d or int(rng.integers(2, 4))
    temperature = temperature or float(rng.choice([0.1, 0.5, 1.0]))
    kernel = kernel or KERNELS[int(rng.integers(len(KERNELS)))]
    z = project_to_sphere(rng.normal(size=(n, d)))
    y = rng.uniform(0, label_scale, size=n)
    return z, y, cosine_similarity_matrix(z, temperature), weight_matrix(kernel, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
