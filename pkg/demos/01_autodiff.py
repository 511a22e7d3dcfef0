"""Walk through the autodiff engine: build a small GCN loss by hand, take
its gradient, and compare against central differences."""

# %%
import numpy as np

from gfl import tensor as T
from gfl.tensor import Tensor, backward, gradcheck

rng = np.random.default_rng(0)

# %% a 4-node path graph and its normalized propagation
A = np.zeros((4, 4))
for i in range(3):
    A[i, i + 1] = A[i + 1, i] = 1.0
M = A + np.eye(4)
d = M.sum(axis=1)
P = M / np.sqrt(np.outer(d, d))

X = rng.normal(size=(4, 3))
W = Tensor(rng.normal(size=(3, 2)), grad_enabled=True)

# %% forward: relu(P X W), then a squared norm
H = T.relu(T.matmul(T.matmul(P, X), W))
loss = T.frobenius_sq(H)
print("loss", loss.item())

# %% backward fills W.grad
backward(loss)
print("dL/dW\n", W.grad)

# %% the same gradient by finite differences
err = gradcheck(lambda w: T.frobenius_sq(T.relu(T.matmul(T.matmul(P, X), w))), W)
print(f"max relative error {err:.2e}")

# %% softmax rows are distributions
S = T.row_softmax(Tensor(rng.normal(size=(3, 5)) * 10))
print("row sums", S.data.sum(axis=1))
