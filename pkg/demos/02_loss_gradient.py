"""The eigenvalue objective and its analytic gradient.

On a random three-class batch the objective (mean of the smallest valid
eigenvalues) is evaluated, its gradient with respect to the features checked
against central differences, and a few plain gradient-ascent steps taken on
the features themselves to watch the weakest discriminant direction grow.
"""
import warnings

import numpy as np

from rdlda.gradcheck import numerical_grad, relative_error
from rdlda.loss import DegenerateEigenvalueWarning, LossConfig, eig_loss, eig_loss_grad
from rdlda.scatter import LabeledBatch

rng = np.random.default_rng(1)
c, d, n = 3, 4, 30
labels = np.arange(n) % c
H = rng.normal(size=(c, d))[labels] + rng.normal(size=(n, d))
cfg = LossConfig(alpha=0.5, epsilon=0.1)

res = eig_loss_grad(LabeledBatch(H, labels, c), cfg)
print("valid eigenvalues:", np.round(res.valid_eigenvalues, 4), " objective:", round(res.loss, 4))

numeric = numerical_grad(lambda: eig_loss(LabeledBatch(H, labels, c), cfg).loss, H)
print(f"relative error vs finite differences: {relative_error(res.grad_h, numeric):.2e}")

print("\nascent on the features (step 0.05):")
with warnings.catch_warnings():
    warnings.simplefilter("ignore", DegenerateEigenvalueWarning)
    for step in range(31):
        res = eig_loss_grad(LabeledBatch(H, labels, c), cfg)
        if step % 10 == 0:
            print(f"  step {step:2d}  objective {res.loss:8.4f}  eigenvalues {np.round(res.valid_eigenvalues, 3)}")
        H = H + 0.05 * res.grad_h
