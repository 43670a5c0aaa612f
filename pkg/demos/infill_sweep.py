"""Final compliance of the desk short beam for several infill volume bounds."""
from shellgrade.optimizer import run
from shellgrade.problems import short_beam

runs = {f"v_lower={v}": short_beam("desk", v_lower=v) for v in (0.5, 0.6, 0.7, 0.8)}
runs["no infill bound"] = short_beam("desk", infill_constraint=False)
runs["uniform infill"] = short_beam("desk", freeze_cpf=True)
for name, problem in runs.items():
    res = run(problem)
    an = res.analysis
    print(f"{name:18s} C {res.compliance:9.3f}  V {an.volume_fraction:.4f}  Vin {an.infill_fraction:.4f}  "
          f"iterations {res.records[-1].iter}")
