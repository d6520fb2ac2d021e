"""How calibration error grows with tracking noise.

Runs a reduced translation and rotation noise sweep over two scenarios and
prints the averaged table.  Rotation noise leaves the orientation estimate
untouched because the geometric steps only ever use positions.

    python3 demos/noise_sweep.py
"""

from carm_pivot.evaluation import run_noise_sweep

report = run_noise_sweep(sigmas_t=(0.0, 1.0, 3.0, 5.0), sigmas_r=(0.1, 0.5), seeds=(0, 1), workers=2)
print(report.format_table())
