import os
import subprocess
import sys

import numpy as np
import pytest

from setmetric import Hyperparams, available_backends, default_backend, solve_pair
from setmetric._backend import get_kernel
from setmetric.errors import InvalidConfig

needs_compiled = pytest.mark.skipif(
    "compiled" not in available_backends(),
    reason="compiled kernel not built",
)


def test_python_backend_always_available():
    assert "python" in available_backends()
    assert default_backend() in available_backends()


def test_get_kernel_names():
    assert get_kernel("python").BACKEND_NAME == "python"
    with pytest.raises(InvalidConfig):
        get_kernel("no-such-backend")


@needs_compiled
def test_backends_bit_identical(rng):
    h = Hyperparams()
    for _ in range(50):
        d = int(rng.integers(1, 10))
        m = int(rng.integers(1, 8))
        n = int(rng.integers(1, 8))
        x = rng.standard_normal((d, m)) * float(rng.uniform(0.1, 10))
        y = rng.standard_normal((d, n)) * float(rng.uniform(0.1, 10))
        y_ij = int(rng.integers(0, 2))
        py = solve_pair(x, y, y_ij, h, backend="python")
        cc = solve_pair(x, y, y_ij, h, backend="compiled")
        assert np.array_equal(py.alpha, cc.alpha)
        assert np.array_equal(py.beta, cc.beta)
        assert py.distance == cc.distance
        assert py.iterations_used == cc.iterations_used
        assert py.converged == cc.converged
        assert py.constraint_residuals == cc.constraint_residuals


@needs_compiled
def test_backends_agree_at_iteration_cap(rng):
    # Truncated runs exercise the non-converged path in both kernels.
    h = Hyperparams(max_iters=3)
    x = rng.standard_normal((4, 5))
    y = rng.standard_normal((4, 6))
    py = solve_pair(x, y, 0, h, backend="python")
    cc = solve_pair(x, y, 0, h, backend="compiled")
    assert not py.converged and not cc.converged
    assert np.array_equal(py.alpha, cc.alpha)
    assert np.array_equal(py.beta, cc.beta)


@pytest.mark.parametrize("forced", ["python"])
def test_env_var_forces_backend(forced):
    code = (
        "from setmetric import default_backend; print(default_backend())"
    )
    env = dict(os.environ, SETMETRIC_KERNEL=forced)
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == forced


def test_env_var_rejects_unknown():
    code = "import setmetric"
    env = dict(os.environ, SETMETRIC_KERNEL="fortran")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0
    assert "SETMETRIC_KERNEL" in out.stderr
