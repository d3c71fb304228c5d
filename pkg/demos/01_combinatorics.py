"""
Counting compositions and Touchard polynomials
==============================================

Exact integer tables behind the moment estimates.
"""

from kawasaki_lab.combinatorics import (bell, composition_weight, enumerate_compositions,
                                        stirling2_row, touchard, wk)

# Weighted compositions of n into m ordered blocks add up to m**n.
for m in range(1, 5):
    sums = [int(sum(composition_weight(c) for c in enumerate_compositions(m, n))) for n in range(6)]
    print(f"m={m}: {sums}  vs  {[m**n for n in range(6)]}")

# Stirling numbers of the second kind give the Touchard coefficients,
# and T_n(1) is the Bell number.
for n in range(7):
    print(n, stirling2_row(n), touchard(n, 1.0), bell(n))

# The closed form of wk agrees with its recurrence.
print(all(wk(3, n, k) == wk(3, n, k, "recurrence") for n in range(10) for k in range(n + 1)))

# Poisson moments: E N^n = T_n(mean).  With mean 2:
print([touchard(n, 2.0) for n in range(1, 5)])
