import json
import os
import subprocess
import sys

import numpy as np

import folms
from folms import StepSizes, SystemParams, VssConfig, run_folms, run_vss

SCRIPT = """
import json, folms
from folms import StepSizes, SystemParams, VssConfig, run_folms, run_vss
p = SystemParams(sigma2_q=1e-12, kappa=1e-2, rho=1e-3, background_power=1e-6)
a = run_folms(p, StepSizes(2e-3, 1e-5, 1e-6), 300, seed=4, warm_start=True)
b = run_vss(p, 300, seed=4, config=VssConfig.for_params(p, "estimate"), warm_start=True)
print(json.dumps({"backend": folms.backend(),
                  "folms": [[z.real, z.imag] for z in a.error],
                  "vss": [[z.real, z.imag] for z in b.error],
                  "mu": b.step_sizes.tolist()}))
"""


def test_fallback_matches_compiled_kernels():
    env = dict(os.environ, FOLMS_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    ref = json.loads(out.stdout)
    assert ref["backend"] == "python"

    p = SystemParams(sigma2_q=1e-12, kappa=1e-2, rho=1e-3, background_power=1e-6)
    a = run_folms(p, StepSizes(2e-3, 1e-5, 1e-6), 300, seed=4, warm_start=True)
    b = run_vss(p, 300, seed=4, config=VssConfig.for_params(p, "estimate"), warm_start=True)
    fa = np.array([complex(*z) for z in ref["folms"]])
    fb = np.array([complex(*z) for z in ref["vss"]])
    np.testing.assert_allclose(a.error, fa, rtol=0, atol=1e-12)
    np.testing.assert_allclose(b.error, fb, rtol=0, atol=1e-12)
    np.testing.assert_allclose(b.step_sizes, np.array(ref["mu"]), rtol=1e-10, atol=0)


def test_backend_flag_in_process():
    assert folms.backend() == ("numba" if folms.HAS_NUMBA else "python")
