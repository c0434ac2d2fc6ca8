"""DIC, LPML and the pseudo Bayes factor between the two system laws.

Positive RDIC and lPsBF favour the Student-t model; twice the lPsBF is read
against the evidence bands.
"""
import numpy as np

from robustdlm import GAUSSIAN, STUDENT_T, DlmSpec, PriorSpec, TimeSeries, compare, fit, score
from robustdlm.selection import FitScores

rng = np.random.default_rng(3)
n = 100
w = rng.normal(0, 1.0, n) * np.where(rng.uniform(size=n) < 0.1, 8.0, 1.0)
y = np.cumsum(w) + rng.normal(0, 1.4, n)

scores = {}
for fam in (GAUSSIAN, STUDENT_T):
    s = score(fit(DlmSpec(TimeSeries(y), fam, PriorSpec())))
    scores[fam] = s
    print(f"{fam:>10s}: DIC {s.dic:8.2f}  p_D {s.p_d:6.2f}  -LPML {s.neg_lpml:8.2f}")

c = compare(scores[GAUSSIAN], scores[STUDENT_T])
print(f"RDIC {c.rdic:+.4f}  lPsBF {c.lpsbf:+.3f}  2lPsBF {c.two_lpsbf:+.3f}  "
      f"RPsBF {c.rpsbf:+.4f}  -> {c.evidence_label}")

# reference score pairs for two regional groups
for name, g, t in (("capitals", (460.22, 229.09), (459.64, 227.81)),
                   ("neighbours", (4753.67, 2379.98), (4746.94, 2375.89))):
    c = compare(FitScores(g[0], 0.0, g[1], np.zeros(0)), FitScores(t[0], 0.0, t[1], np.zeros(0)))
    print(f"{name:>10s}: 2lPsBF {c.two_lpsbf:.2f} ({c.evidence_label}), RDIC {c.rdic:.7f}")
