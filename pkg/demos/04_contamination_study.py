"""A small contamination study.

Innovations follow (1 - p) N(0, 2) + p f N(0, 2).  For each scenario both
models are fitted to every replicate and the medians of the efficiency,
RDIC and RPsBF are reported.  The full study uses 100 replicates; set
ROBUSTDLM_WORKERS to use several processes.
"""
import sys
import warnings

from robustdlm.simlab import figure_table, run_study, scenario_grid

replicates = int(sys.argv[1]) if len(sys.argv) > 1 else 5
configs = scenario_grid(n_values=(100,), p_values=(0.0, 0.1), f_values=(2.0, 8.0),
                        replicates=replicates)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    report = run_study(configs)

for s in report.scenarios:
    print(f"{s.config.label:>14s}  done {s.completed}/{s.config.replicates}  "
          f"E {s.median('efficiency'):+.4f}  RDIC {s.median('rdic'):+.5f}  "
          f"RPsBF {s.median('rpsbf'):+.5f}")

print("\nmedian efficiency by (f, n_d) and p")
for row in figure_table(report, "efficiency"):
    print("  ".join(f"{v:>8.4f}" if isinstance(v, float) and not v.is_integer() else f"{v!s:>8}"
                    for v in row))
