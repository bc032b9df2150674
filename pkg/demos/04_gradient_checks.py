"""Finite-difference check of every backward pass (double precision, about 15 s).

    python3 demos/04_gradient_checks.py
"""

from vaenilm.gradcheck import run_suite

results = run_suite(seed=0)
for r in results:
    print(r.line())
print("all passed" if all(r.passed for r in results) else "FAILURES")
