"""Optimize the desk-scale short beam and write every output file."""
import sys
from pathlib import Path

from shellgrade.cli import write_outputs
from shellgrade.optimizer import run
from shellgrade.problems import short_beam

out = Path(sys.argv[1] if len(sys.argv) > 1 else "short_beam_out")
problem = short_beam("desk")
result = run(problem, callback=lambda rec, an: print(
    f"{rec.iter:4d}  C {rec.compliance:10.4f}  V {rec.volume_fraction:.4f}  Vin {rec.infill_volume_fraction:.4f}"))
for path in write_outputs(result, problem, out):
    print("wrote", path)
