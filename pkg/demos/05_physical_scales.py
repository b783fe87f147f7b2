"""From physical units to the model's dimensionless constants."""

from electrolocation.scaling import PhysicalParams, eqs_validity, nondimensionalize

p = PhysicalParams()
for name, value in nondimensionalize(p).items():
    print(f"{name:>14} = {value:.3g}")

for L_max, w_max in ((1.0, 1e4), (1e6, 1e4)):
    ratio, ok = eqs_validity(p, L_max, w_max)
    print(f"L_max={L_max:g} m, omega_max={w_max:g} rad/s: ratio {ratio:.2e} -> "
          f"{'quasi-static model applies' if ok else 'quasi-static model breaks down'}")
