# %% [markdown]
# # Exact p-values
#
# Under the null each step hits with probability 1/l independently, so the
# hit count is Binomial(T, 1/l) and the p-value is its upper tail. The tail is
# evaluated in log space and stays accurate far below double precision.

# %%
from fractions import Fraction
from math import comb

from mcmark import binomial_tail_pvalue, log_binomial_tail_pvalue

T, l = 200, 20
for phi in (10, 20, 40, 80, 200):
    exact = Fraction(sum(comb(T, i) * (l - 1) ** (T - i) for i in range(phi, T + 1)), l**T)
    print(f"phi={phi:3d}  computed={binomial_tail_pvalue(phi, T, l):.6e}  exact={float(exact):.6e}")

# %% [markdown]
# Beyond the float range the log value is still meaningful.

# %%
print("log10 P(Bin(500, 1/100) >= 500) =", log_binomial_tail_pvalue(500, 500, 100) / 2.302585092994046)
