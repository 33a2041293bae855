"""Compare the numba kernels against the pure-numpy fallback.

Each workload runs in a fresh interpreter so the backend choice (the
MFGZ_FORCE_NUMPY environment flag) is fixed at import time, exactly as a
user would experience it.  Reported numba timings exclude the first-call
JIT compilation by running every workload twice and keeping the second.

Usage: python benchmarks/bench_backends.py
"""

import json
import os
import subprocess
import sys

WORKLOADS = {
    "hji_dirac_401": """
import time
import numpy as np
from mfgz.game import load_config, control_grid
from mfgz.hji import SpatialGrid, SchemeConfig, solve
from mfgz.measures import EmpiricalMeasure

spec, defaults, _ = load_config("example2_dirac")
grid = SpatialGrid([(-2.0, 2.0, 401)])
ug = control_grid(spec.u_box, 5)
vg = control_grid(spec.v_box, 5)
z0 = EmpiricalMeasure.dirac(0.0)
best = None
for attempt in range(2):
    t0 = time.time()
    res = solve(spec, grid, z0, "lower", SchemeConfig(280), u_grid=ug, v_grid=vg)
    best = time.time() - t0
value = float(res.field.values[200])
print(__import__("json").dumps({"seconds": best, "value": value}))
""",
    "dpp_two_atoms": """
import time
import numpy as np
from mfgz.game import load_config, make_ensemble
from mfgz.dpp import DppConfig, dpp_value, suggest_grid
from mfgz.dynamics import IntegratorConfig

spec, defaults, _ = load_config("example1_gaussian")
ens = make_ensemble(defaults, spec.dim, particles=2)
grid = suggest_grid(spec, ens, 12, 4, 4, 0.12)
cfg = DppConfig(12, 4, 4, grid, IntegratorConfig("rk4", 1))
best = None
for attempt in range(2):
    t0 = time.time()
    rep = dpp_value(spec, ens, cfg)
    best = time.time() - t0
print(__import__("json").dumps({"seconds": best, "value": rep.lower}))
""",
    "dpp_four_atoms_separable": """
import time
import numpy as np
from mfgz.game import load_config, make_ensemble
from mfgz.dpp import DppConfig, dpp_value, suggest_grid
from mfgz.dynamics import IntegratorConfig

spec, defaults, _ = load_config("example1_gaussian")
ens = make_ensemble(defaults, spec.dim, particles=4)
grid = suggest_grid(spec, ens, 10, 3, 3, 0.35)
cfg = DppConfig(10, 3, 3, grid, IntegratorConfig("euler", 1))
best = None
for attempt in range(2):
    t0 = time.time()
    rep = dpp_value(spec, ens, cfg)
    best = time.time() - t0
print(__import__("json").dumps({"seconds": best, "value": rep.lower}))
""",
}


def run(code, force_numpy):
    env = dict(os.environ)
    env["MFGZ_FORCE_NUMPY"] = "1" if force_numpy else "0"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True,
                         text=True, env=env)
    if out.returncode != 0:
        raise RuntimeError(out.stderr)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    print("%-28s %10s %10s %8s %12s" % ("workload", "numba[s]", "numpy[s]",
                                        "speedup", "|value diff|"))
    for name, code in WORKLOADS.items():
        nb = run(code, force_numpy=False)
        np_ = run(code, force_numpy=True)
        print("%-28s %10.3f %10.3f %7.1fx %12.3g"
              % (name, nb["seconds"], np_["seconds"],
                 np_["seconds"] / max(nb["seconds"], 1e-9),
                 abs(nb["value"] - np_["value"])))


if __name__ == "__main__":
    main()
