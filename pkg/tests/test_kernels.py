import subprocess
import sys

import numpy as np
import pytest

import coxsel._kernels as K
from coxsel._kernels import numba_backend, numpy_backend
from coxsel.data import build_risk_index
from coxsel.lasso import LassoProblem, _Solver, _lambda_grid

from conftest import make_survival

needs_numba = pytest.mark.skipif(
    numba_backend is None, reason="numba backend not active"
)


@needs_numba
def test_cd_quad_backends_agree():
    rng = np.random.default_rng(0)
    q = 20
    h = rng.standard_normal((q, q))
    hess = np.ascontiguousarray(h.T @ h / q + np.eye(q))
    diag = np.ascontiguousarray(np.diag(hess))
    g0 = rng.standard_normal(q)
    pen = np.ones(q)
    out = {}
    for name, backend in (("nb", numba_backend), ("np", numpy_backend)):
        g = g0.copy()
        coef = np.zeros(q)
        backend.cd_quad(g, coef, hess, diag, 0.05, pen, False, 500, 1e-10)
        out[name] = coef
    assert np.array_equal(out["nb"], out["np"])


@needs_numba
def test_likelihood_pass_backends_agree():
    d = make_survival(n=150, p=6, seed=3)
    solver = _Solver(LassoProblem.cox(d, build_risk_index(d)))
    rng = np.random.default_rng(1)
    eta_s = rng.standard_normal(d.n) * 0.2
    args = (eta_s, solver.evt_s, solver.tie_start, solver.tie_count, solver.nevt_le)
    a = numba_backend.cox_irls(*args)
    b = numpy_backend.cox_irls(*args)
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=0, atol=1e-12)
    la = numba_backend.cox_negll(eta_s, solver.evt_s, solver.tie_start, solver.tie_count)
    lb = numpy_backend.cox_negll(eta_s, solver.evt_s, solver.tie_start, solver.tie_count)
    assert abs(la - lb) < 1e-12


@needs_numba
def test_whole_path_backends_agree():
    d = make_survival(n=120, p=8, seed=4)
    ix = build_risk_index(d)
    prob = LassoProblem.cox(d, ix)
    warm = _Solver(prob)
    _, _, _, grad0 = warm.solve(1e300, None)
    pp = warm.pen > 0
    grid = _lambda_grid(np.max(np.abs(grad0[pp]) / warm.pen[pp]), 30, 0.05)

    def run():
        s = _Solver(LassoProblem.cox(d, ix))
        coefs, _, kkts = s.run_path(grid)
        return coefs, kkts

    coefs_nb, kkts_nb = run()
    saved = (K.cd_quad, K.cox_irls, K.cox_negll, K.cox_path)
    K.cd_quad, K.cox_irls, K.cox_negll, K.cox_path = (
        numpy_backend.cd_quad, numpy_backend.cox_irls,
        numpy_backend.cox_negll, numpy_backend.cox_path,
    )
    try:
        coefs_np, kkts_np = run()
    finally:
        K.cd_quad, K.cox_irls, K.cox_negll, K.cox_path = saved
    assert np.max(np.abs(coefs_nb - coefs_np)) < 1e-12
    assert np.all(kkts_nb <= 1e-6) and np.all(kkts_np <= 1e-6)


def test_env_flag_selects_numpy_backend():
    code = (
        "import coxsel, coxsel._kernels as K\n"
        "assert coxsel.BACKEND == 'numpy', coxsel.BACKEND\n"
        "assert K.numba_backend is None or K.cd_quad is K.numpy_backend.cd_quad\n"
    )
    proc = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True, text=True,
        env={"PATH": "/usr/bin:/bin", "COXSEL_NUMBA": "0"},
    )
    assert proc.returncode == 0, proc.stderr


def test_backends_give_same_inference(tmp_path):
    # a full pipeline run must not depend on the backend choice
    script = tmp_path / "run.py"
    script.write_text(
        "import numpy as np\n"
        "from coxsel import DgpConfig, PipelineConfig, generate_dataset, run_triple_selection\n"
        "d = generate_dataset(DgpConfig(n=150, p=8, seed=9))\n"
        "r = run_triple_selection(d, PipelineConfig(cv_folds=4, seed=1))\n"
        "print(repr(r.estimate), repr(r.se))\n"
    )
    outs = []
    for flag in ("1", "0"):
        proc = subprocess.run(
            [sys.executable, str(script)],
            capture_output=True, text=True,
            env={"PATH": "/usr/bin:/bin", "COXSEL_NUMBA": flag},
        )
        assert proc.returncode == 0, proc.stderr
        outs.append(proc.stdout)
    est1, se1 = map(float, outs[0].split())
    est2, se2 = map(float, outs[1].split())
    assert abs(est1 - est2) < 1e-9
    assert abs(se1 - se2) < 1e-9
