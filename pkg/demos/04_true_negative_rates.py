# %% [markdown]
# # Expected true-negative rates
#
# An unbiased watermark cannot watermark every token: on a true negative the
# sampled token carries no signal. For a two-segment split with red mass
# uniform on [0, 1], the per-token true-negative rate has closed-form moments
# that the numeric integrals reproduce.

# %%
from mcmark import closed_form_etn_moments, expected_etn_uniform

print(f"{'method':10s} {'alpha':>5s} {'mean':>10s} {'variance':>10s} {'closed mean':>12s}")
for method, alpha in [("mcmark2", None), ("sta", None), ("dipmark", 0.3), ("dipmark", 0.4), ("dipmark", 0.5)]:
    mean, var = expected_etn_uniform(method, alpha)
    cmean, _ = closed_form_etn_moments(method, alpha)
    print(f"{method:10s} {alpha if alpha is not None else '':>5} {mean:10.6f} {var:10.6f} {cmean:12.6f}")
