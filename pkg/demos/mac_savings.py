"""
What merging saves in attention cost
====================================

Attention cost is counted analytically in multiply-accumulates:
projections grow linearly with token count, score and value matrices
quadratically.  Halving the tokens therefore cuts well past half the
MACs once the quadratic terms dominate, which is the point of merging.
"""

from pathohr.harness import bench_report
from pathohr.model import attention_mac_breakdown, count_attention_macs

d, heads = 64, 4
print("n tokens   MACs(n)      MACs(n/2)    ratio")
for n in (256, 1024, 4096):
    full = count_attention_macs(n, d, heads)
    half = count_attention_macs(n // 2, d, heads)
    print("%8d   %-12d %-12d %.3f" % (n, full, half, half / full))

# where the cost lives at n = 4096
parts = attention_mac_breakdown(4096, d, heads)
total = parts["total"]
for name, macs in parts.items():
    if name != "total":
        print("%-12s %12d  (%.0f%%)" % (name, macs, 100.0 * macs / total))

# measured wall time for one attention pass, merged vs not
print("\nn      wall unmerged  wall merged")
for row in bench_report(d=d, heads=heads, sizes=(256, 1024)):
    print("%-6d %10.4fs %11.4fs" % (row["n"], row["wall_s_unmerged"],
                                    row["wall_s_merged"]))
