"""Write a volume to NIfTI-1, read it back, and inspect the header.

The writer emits single-file .nii (or .nii.gz) with the fixed 348-byte
header; the reader handles both byte orders and applies scl_slope/inter.
"""

import tempfile
from pathlib import Path

import numpy as np

from gliomaforge import Volume, load_volume, save_volume

rng = np.random.default_rng(0)
data = rng.normal(loc=100.0, scale=15.0, size=(24, 32, 28)).astype(np.float32)
vol = Volume.from_array(data, spacing=(1.0, 1.0, 1.5))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.nii.gz"
    save_volume(path, vol)
    print(f"wrote {path.name}: {path.stat().st_size} bytes on disk")

    back = load_volume(path)
    print("dims     :", back.dims)
    print("spacing  :", tuple(round(s, 3) for s in back.spacing))
    print("dtype    :", back.header.datatype)
    print("bit-exact:", np.array_equal(back.data, data))
