"""Run the segmentation network forward and inspect the feature pyramid.

The encoder downsamples 4x then 2x per stage, so a 64-cube input yields
feature grids of 16/8/4/2 at channel widths 48/96/192/384. The decoder
returns one logit map per label class at the input resolution.
"""

import time

import numpy as np

from gliomaforge import GliomaForgeNet, ModelConfig
from gliomaforge.autodiff import Tensor, no_grad

config = ModelConfig()
model = GliomaForgeNet(config=config, seed=0)
print(f"parameters: {model.parameter_count():,}")

x = Tensor(np.random.default_rng(1).normal(size=(1, 4, 64, 64, 64)).astype(np.float32))
t0 = time.time()
with no_grad():
    pyramid = model.encode(model.frequency_stem(x))
    logits = model(x)
print(f"forward time: {time.time() - t0:.2f}s (64-cube, batch 1, CPU)")

print("\nstage  channels  grid")
for i, feat in enumerate(pyramid, start=1):
    n, c, d, h, w = feat.shape
    print(f"  {i}      {c:4d}     {d}x{h}x{w}")
print(f"\nlogits: {logits.shape}  (4 classes at input resolution)")

pred = np.argmax(logits.data, axis=1)
values, counts = np.unique(pred, return_counts=True)
print("argmax label histogram:", dict(zip(values.tolist(), counts.tolist())))
