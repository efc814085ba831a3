"""Popularity-driven masking schedules, side by side.

During training a candidate's entity embedding is zeroed with a
probability that depends on how often that entity was a gold label.
Rare entities get masked almost always, so the model is forced to score
them from type and relation structure instead of a memorized vector.
"""

from tailned.trainer import RegScheme, reg_prob

COUNTS = [0, 1, 5, 10, 100, 1000, 10000, 100000]

schemes = [
    ("inv_pop_power", RegScheme(kind="inv_pop_power")),
    ("inv_pop_linear", RegScheme(kind="inv_pop_linear")),
    ("inv_pop_log", RegScheme(kind="inv_pop_log")),
    ("pop_power (pivot 1e4)", RegScheme(kind="pop_power", max_count=10000)),
    ("fixed(0.0)", RegScheme(kind="fixed", p=0.0)),
]

header = "count".rjust(8) + "".join(name.rjust(24) for name, _ in schemes)
print(header)
print("-" * len(header))
for c in COUNTS:
    row = f"{c:>8}"
    for _, scheme in schemes:
        row += f"{reg_prob(c, scheme):>24.4f}"
    print(row)

print()
print("Anchors the curves are built around (clamped to [0.05, 0.95]):")
p = RegScheme(kind="inv_pop_power")
print(f"  inv_pop_power  f(1)     = {reg_prob(1, p):.4f}  (exactly 0.95)")
print(f"  inv_pop_power  f(10000) = {reg_prob(10000, p):.4f}  (~0.05)")
print("  pop_power flips the curve: popular entities get masked instead,")
print("  which is the control arm showing direction matters, not masking per se.")
