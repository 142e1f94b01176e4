"""The selective scan on its own: two evaluation orders and linear cost in length."""

import numpy as np

from posemagic.bench import bench_scan
from posemagic.ssm import ScanInputs, scan_parallel, scan_sequential

rng = np.random.default_rng(0)
L, D, n = 300, 8, 4
inp = ScanInputs(rng.uniform(0.2, 0.99, (L, D, n)), rng.normal(size=(L, D, n)), rng.normal(size=(L, n)))

# The recurrence h_t = a_t * h_{t-1} + b_t is associative, so a tree-shaped
# prefix scan gives the same outputs as the step-by-step loop.
y_seq, y_par = scan_sequential(inp), scan_parallel(inp)
print("max |parallel - sequential| =", np.abs(y_seq - y_par).max())

res = bench_scan([1024, 2048, 4096, 8192])
for p in res["points"]:
    print(f"L={p['L']:5d}  {p['ms']:7.2f} ms")
print(f"time ~ L^{res['exponent']:.2f}")
