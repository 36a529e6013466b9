# %% [markdown]
# # Channel matrices
#
# A secret key splits the vocabulary into l segments. Given the model's
# next-token distribution, each segment carries some probability mass, and the
# channel matrix says how much of segment j each channel i may use. Every
# channel is a valid distribution, and averaging the l channels gives back the
# original distribution exactly.

# %%
import numpy as np

from mcmark import all_channel_distributions, build_channel_matrix, derive_partition, segment_mass

# %% [markdown]
# The two-segment case is small enough to check by hand. With masses 0.3 and
# 0.7, channel 0 keeps all of segment 0 and borrows the remainder from
# segment 1.

# %%
print(build_channel_matrix([0.3, 0.7]))

# %% [markdown]
# A larger example with a random distribution over 50 tokens and 5 segments.

# %%
key = bytes(range(16))
rng = np.random.default_rng(0)
p = rng.dirichlet(np.full(50, 0.3))
part = derive_partition(key, vocab_size=50, l=5)
mass = segment_mass(p, part)
M = build_channel_matrix(mass)
print("segment masses:", np.round(mass, 3))
print("channel matrix:\n", np.round(M, 3))
print("row sums:", M.sum(axis=1))
print("column sums / l:", M.sum(axis=0) / 5)

# %%
channels = all_channel_distributions(p, part)
print("max |mean of channels - p| =", np.abs(channels.mean(axis=0) - p).max())
