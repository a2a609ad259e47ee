import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T + d * np.eye(d))


def random_psd(rng, d, rank):
    B = rng.normal(size=(d, rank))
    return B @ B.T


def random_lda_batch(rng, c, d, n, spread=2.0):
    """Every class present, at least one sample each; features roughly class-separated."""
    from rdlda.scatter import LabeledBatch

    labels = np.concatenate([np.arange(c), rng.integers(0, c, size=n - c)])
    rng.shuffle(labels)
    centres = rng.normal(scale=spread, size=(c, d))
    return LabeledBatch(centres[labels] + rng.normal(size=(n, d)), labels, c)


def eig_loss_fd_error(batch, cfg, step=1e-5):
    """Relative error of eig_loss_grad against central differences; None if degenerate."""
    import warnings

    from rdlda.gradcheck import numerical_grad, relative_error
    from rdlda.loss import DegenerateEigenvalueWarning, eig_loss, eig_loss_grad
    from rdlda.scatter import LabeledBatch

    with warnings.catch_warnings():
        warnings.simplefilter("error", DegenerateEigenvalueWarning)
        try:
            res = eig_loss_grad(batch, cfg)
        except DegenerateEigenvalueWarning:
            return None
    H = batch.features.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateEigenvalueWarning)
        num = numerical_grad(lambda: eig_loss(LabeledBatch(H, batch.labels, batch.class_count), cfg).loss,
                             H, step=step)
    return relative_error(res.grad_h, num)


def network_fd_error(net, x, loss_fn, seed=0, step=1e-5, max_entries=40, check_input=True):
    """Global relative error of backprop against central differences.

    ``loss_fn(out) -> (loss, grad_out)``.  Dropout masks are reproduced by
    recreating the generator for every forward pass.  Up to ``max_entries``
    positions per tensor are checked.
    """
    from rdlda.gradcheck import numerical_grad, relative_error

    def run():
        out, _ = net.forward(x, "train", np.random.default_rng(seed))
        return loss_fn(out)[0]

    out, cache = net.forward(x, "train", np.random.default_rng(seed))
    grads, grad_in = net.backward(cache, loss_fn(out)[1])
    pick = np.random.default_rng(99)
    analytic, numeric = [], []
    targets = list(net.parameters().items()) + ([("input", x)] if check_input else [])
    for name, tensor in targets:
        size = tensor.size
        idx = pick.choice(size, size=min(size, max_entries), replace=False)
        num = numerical_grad(run, tensor, step=step, indices=idx)
        ana = (grad_in if name == "input" else grads[name]).reshape(-1)[idx]
        analytic.append(ana)
        numeric.append(num.reshape(-1)[idx])
    return relative_error(analytic, numeric)


def quadratic_probe(rng, shape):
    """A fixed random linear-plus-square readout used to check layer gradients."""
    W = rng.normal(size=shape)

    def loss_fn(out):
        return float((W * out).sum() + 0.5 * (out ** 2).sum()), W + out

    return loss_fn


_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """``criterion(number, summary, passed)`` records a line for the terminal summary."""

    def record(number, summary, passed):
        _ACCEPTANCE[number] = (summary, bool(passed))
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {summary}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        summary, passed = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {summary}")
