"""How wide the concatenated weighting tensor gets when branches are
weighted all together versus in high/low resolution groups.

    python3 demos/02_channel_growth.py
"""
from greit_hrnet.accounting import channel_growth_report, report_for

for method in ("ccw", "gcw"):
    print(channel_growth_report(method).to_text(), end="\n\n")

# The built network weights the active half of each branch, so what it
# actually concatenates is the same report for halved widths.
print("measured in greit18 (stage, group, channels):")
for row in report_for("greit18").trajectory:
    print(" ", row)
