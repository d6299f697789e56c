# Frame quality without a reference image. Each pixel's neighbourhood is
# analysed along eight directions; a sharp image has entropy that depends
# strongly on direction, blur makes it isotropic.

# %%
import numpy as np
from scipy.ndimage import gaussian_filter

from roomrecon.capsim import checkerboard_image
from roomrecon.core import GrayImage
from roomrecon.reduce import ReduceConfig, anisotropy, directional_entropies, renyi_entropy

# %%
# Renyi entropy of order alpha: log2 N for a uniform distribution, 0 for a delta.
for p in ([0.25, 0.25, 0.25, 0.25], [1.0, 0.0, 0.0], [0.7, 0.2, 0.1]):
    print(p, "->", round(renyi_entropy(p, 3.0), 4))

# %%
board = checkerboard_image()
cfg = ReduceConfig()
print("mean entropy per direction:", np.round(directional_entropies(board, cfg), 3))

# %%
# Blurring the board pulls the score towards zero.
a = board.pixels.astype(float)
for sigma in (0, 1, 2, 4):
    b = gaussian_filter(a, sigma) if sigma else a
    img = GrayImage(128, 96, np.rint(b).astype(np.uint8))
    print(f"sigma {sigma}: anisotropy {anisotropy(img, cfg):.4f}")

# %%
flat = GrayImage(128, 96, np.full((96, 128), 90))
print("flat image:", anisotropy(flat, cfg))
