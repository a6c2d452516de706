"""Finite-difference check of the autodiff on a tiny fusion model."""

# %%
import numpy as np

from mmbeam import tensor as T
from mmbeam.fusion import BeamPredictor, PredictorConfig
from mmbeam.gradcheck import check_gradients
from mmbeam.tensor import Tensor

cfg = PredictorConfig(
    variant="fusion", n_beams=8,
    position={"d_g": 8, "layers": 1, "heads": 2},
    visual={"image_size": 8, "stem_channels": 8, "stages": 1, "window": 2, "grid": 2, "head_dim": 8},
)
model = BeamPredictor(cfg, seed=0)
rng = np.random.default_rng(1)
for p in model.parameters():
    p.data = p.data + 0.05 * rng.standard_normal(p.shape)

gps = Tensor(rng.random((2, 2)))
images = Tensor(rng.standard_normal((2, 8, 8, 3)))
labels = np.array([3, 5])

# %%
errors = check_gradients(lambda: T.cross_entropy(model(gps, images), labels),
                         model.named_parameters(), max_entries=6, rng=rng)
worst = sorted(errors.items(), key=lambda kv: -kv[1])[:5]
print(f"{len(errors)} parameter tensors checked")
for name, err in worst:
    print(f"  {name:45s} {err:.2e}")
