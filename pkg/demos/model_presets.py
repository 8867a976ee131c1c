"""
SepViT variants and their sizes
===============================

Each preset is a four-stage configuration. The micro preset is small enough
to train on a laptop; the others match the published variants at 224 px.
"""

import numpy as np

from sepvit.analyzer import analytic_model_cost, count_params
from sepvit.backbone import PRESETS, SepViT, preset
from sepvit.tensor import Tensor

for name in PRESETS:
    cfg = preset(name)
    params = count_params(SepViT(cfg))["total"]
    gmacs = analytic_model_cost(cfg).analytic_total / 1e9
    depths = [s.depth for s in cfg.stages]
    chans = [s.channels for s in cfg.stages]
    print(f"{name:6s} depths {depths}  channels {chans}  {params / 1e6:6.2f}M params  {gmacs:5.2f} GMACs")

# Block kinds per stage: grouped blocks alternate with plain ones in stages 2 and 3
for i, s in enumerate(preset("tiny").stages, start=1):
    print(f"stage {i}: {' '.join(s.block_pattern)}")

# Stage outputs shrink by 4, then 2 per stage
model = SepViT(preset("micro"))
feats = model.features(Tensor(np.zeros((1, 3, 64, 64), np.float32)))
print("micro stage shapes:", [f.shape for f in feats])
