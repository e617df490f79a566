import numpy as np
import pytest

from noforge.batch import Batch
from noforge.gradcheck import central_difference, rel_error, sample_indices


def dft_matrix(n, inverse=False):
    """Independent dense DFT matrix (no modular reduction, no caching)."""
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def brute_dft3(x):
    """Full complex 3D DFT over the last three axes by dense matrix products."""
    w, h, d = x.shape[-3:]
    z = np.einsum("...whd,aw->...ahd", x.astype(complex), dft_matrix(w))
    z = np.einsum("...ahd,bh->...abd", z, dft_matrix(h))
    return np.einsum("...abd,cd->...abc", z, dft_matrix(d))


# Gradient norms below this are compared absolutely: some parameters are
# provably inert (e.g. imaginary weights on self-conjugate spectral planes), and
# their true gradient of 0 would otherwise be compared against pure FD noise.
GRAD_FLOOR = 1e-4


def layer_gradcheck(layer, x, rng, eps=1e-6, max_entries=None, floor=GRAD_FLOOR, fixed_rng_seed=None):
    """Compare ``backward`` against central differences of ``sum(forward(x) * R)``.

    Returns ``{"x": err, name: err, ...}``. ``max_entries`` samples that many
    entries per tensor; ``fixed_rng_seed`` reseeds dropout before every forward.
    """
    def fwd():
        if fixed_rng_seed is not None:
            if hasattr(layer, "set_rng"):
                layer.set_rng(np.random.default_rng(fixed_rng_seed))
            else:
                layer.rng = np.random.default_rng(fixed_rng_seed)
        return layer.forward(x)

    out = fwd()
    r = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(fwd() * r))

    for _, p in layer.named_params():
        p.grad.fill(0)
    fwd()
    gx = layer.backward(r)
    errs = {}

    def check(name, arr, grad):
        if max_entries is None or arr.size <= max_entries:
            num = central_difference(loss, arr, eps=eps)
            errs[name] = rel_error(grad, num, floor)
        else:
            idx = sample_indices(arr.shape, max_entries, rng)
            num = central_difference(loss, arr, idx, eps=eps)
            errs[name] = rel_error(np.array([grad[i] for i in idx]), num, floor)

    if gx is not None:
        check("x", x, gx)
    for name, p in layer.named_params():
        check(name, p.value, p.grad.copy())
    return errs


def model_gradcheck(model, batch, rng, entries=6, x_entries=20, dropout_seed=5, floor=GRAD_FLOOR):
    """Sampled central-difference check of a whole model on ``batch``.

    Returns ``{"x": err, name: err, ...}``; ``"x"`` is omitted for models whose
    backward does not return an input gradient.
    """
    def fwd():
        model.set_rng(np.random.default_rng(dropout_seed))
        return model.forward_batch(batch)

    r = rng.standard_normal(fwd().shape)

    def loss():
        return float(np.sum(fwd() * r))

    model.zero_grad()
    fwd()
    gx = model.backward_batch(r)
    errs = {}
    for name, p in model.named_params():
        idx = sample_indices(p.shape, entries, rng)
        num = central_difference(loss, p.value, idx)
        errs[name] = rel_error(np.array([p.grad[i] for i in idx]), num, floor)
    if gx is not None:
        idx = sample_indices(batch.grid_input.shape, x_entries, rng)
        num = central_difference(loss, batch.grid_input, idx)
        errs["x"] = rel_error(np.array([gx[i] for i in idx]), num, floor)
    return errs


def randomize_biases(model, rng, scale=0.1):
    """Move biases off exactly zero so ReLU kinks are not hit at grid points."""
    for name, p in model.named_params():
        if name.endswith("bias") or name.endswith("beta"):
            p.value[...] = scale * rng.standard_normal(p.shape)


def random_batch(rng, grid, b=2, dtype=np.float64, mask_fraction=0.7):
    grid = tuple(grid)
    return Batch(
        grid_input=rng.standard_normal((b, 9) + grid).astype(dtype),
        t1=rng.standard_normal((b, 1) + grid).astype(dtype),
        scalars=rng.random((b, 5)).astype(dtype),
        mask=(rng.random((b, 1) + grid) < mask_fraction).astype(dtype),
        target=rng.standard_normal((b, 3) + grid).astype(dtype),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    from noforge.data import generate_synthetic_dataset
    return generate_synthetic_dataset(10, (8, 8, 4), seed=3)


# -- acceptance reporting ----------------------------------------------------------
ACCEPTANCE_TITLES = {
    1: "FFT correctness against a brute-force DFT",
    2: "gradient soundness by central finite differences",
    3: "mask semantics of loss and gradients",
    4: "structural constants",
    5: "parameter-efficiency ratio and closed-form counts",
    6: "learnability at desk scale",
    7: "scheduler and optimizer contracts",
    8: "determinism of generate/train/evaluate",
    9: "resolution consistency of the spectral convolution",
    10: "benchmark report shape",
}
_acceptance = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): test belongs to acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        results = _acceptance.setdefault(n, [])
        results.append((item.name, "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(set(ACCEPTANCE_TITLES) | set(_acceptance)):
        results = _acceptance.get(n, [])
        if not results:
            tr.write_line(f"criterion {n:2d}: NOT RUN  {ACCEPTANCE_TITLES.get(n, '')}")
            continue
        failed = [name for name, r in results if r == "FAIL"]
        status = "FAIL" if failed else ("PASS" if all(r == "PASS" for _, r in results) else "INCOMPLETE")
        line = f"criterion {n:2d}: {status}  {ACCEPTANCE_TITLES.get(n, '')} ({len(results)} checks)"
        if failed:
            line += "  failed: " + ", ".join(failed)
        tr.write_line(line)
