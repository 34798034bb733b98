"""Tour of the tensor library: graphs, gradients, checking, and Adam.

Run:  python demos/01_tensor_autodiff.py
"""

import numpy as np

from tinymmt import autodiff as ad
from tinymmt.autodiff import Adam, Tensor, grad_check, warmup_rsqrt_lr

print("== building a small computation graph ==")
rng = np.random.default_rng(0)
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="w")
x = Tensor([[1.0, -2.0, 0.5]])
hidden = ad.tanh(x @ w)
loss = ad.tensor_sum(hidden * hidden)
print("loss:", loss.item())

loss.backward()
print("dloss/dw:\n", w.grad)

print("\n== gradients accumulate until the optimizer consumes them ==")
loss2 = ad.tensor_sum(ad.tanh(x @ w))
loss2.backward()
print("after second backward, grad magnitude grew:", np.abs(w.grad).sum())

print("\n== finite-difference gradient check ==")
w.zero_grad()
report = grad_check(lambda: ad.tensor_sum(ad.sigmoid(x @ w)), {"w": w},
                    h=1e-5, tol=1e-6)
print(report)

print("\n== masked softmax: blocked positions get zero weight and zero gradient ==")
scores = Tensor([[2.0, 1.0, 0.5]], requires_grad=True, name="scores")
mask = np.array([[False, True, False]])
probs = ad.softmax(ad.masked_fill(scores, mask))
print("probabilities:", probs.data, "(middle entry masked)")
ad.tensor_sum(probs * probs).backward()
print("gradient at the masked position:", scores.grad[0, 1])

print("\n== Adam with the warmup / inverse-square-root schedule ==")
for step in (1, 100, 400, 1600):
    print(f"  lr at step {step:5d}: {warmup_rsqrt_lr(step, 2.0, 64, 400):.6f}")
p = Tensor([0.0], requires_grad=True, name="p")
opt = Adam({"p": p}, d_model=64, base_lr=2.0, warmup_steps=20)
for _ in range(400):
    gap = ad.scale(p - Tensor([3.0]), 1.0)
    ad.tensor_sum(gap * gap).backward()
    opt.step()
print("minimizing (p - 3)^2 for 400 steps (short warmup): p =", round(p.data[0], 4))
