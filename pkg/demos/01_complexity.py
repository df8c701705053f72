"""Parameter and FLOP budgets of the four variants, and where the FLOPs go.

    python3 demos/01_complexity.py
"""
from greit_hrnet.accounting import report_for

print(f"{'variant':<9}{'params':>12}{'GFLOPs 256x192':>17}{'GFLOPs 384x288':>17}")
for variant in ("lite18", "greit18", "lite30", "greit30"):
    small = report_for(variant)
    large = report_for(variant, (384, 288))
    print(f"{variant:<9}{small.total_params:>12,}{small.total_flops / 1e9:>17.4f}"
          f"{large.total_flops / 1e9:>17.4f}")

# Breakdown by layer kind for one variant.
rep = report_for("greit18")
total = rep.total_flops
print("\ngreit18 FLOPs by layer kind:")
for kind, flops in sorted(rep.flops_by_kind().items(), key=lambda kv: -kv[1]):
    print(f"  {kind:<12}{flops / 1e6:>9.2f}M  {100 * flops / total:5.1f}%")

# Share of the spatial weighting path (saliency convs, matmul and its SE).
spatial = sum(r.flops for r in rep.rows if ".spatial." in r.name)
print(f"\nspatial weighting: {100 * spatial / total:.2f}% of FLOPs")
