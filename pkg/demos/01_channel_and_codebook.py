"""Walk through the synthetic V2V channel: codebook, beam sweep, one generated sample."""

# %%
import math

import numpy as np

from mmbeam.channel import (ScenarioConfig, build_codebook, generate_sample, los_channel, optimal_beam,
                            received_power_vector)

cfg = ScenarioConfig(n_rx=16, n_beams=64, noise_variance=0.0)
cb = build_codebook(cfg)
print("codebook", cb.vectors.shape, "first/last steering angle (deg):",
      round(math.degrees(cb.steering_angles[0]), 2), round(math.degrees(cb.steering_angles[-1]), 2))

# %%
# A transmitter 15 m away at 20 degrees to the right. The sweep peaks on the beam whose
# steering angle sits closest in sin-space.
theta = math.radians(20)
channel = los_channel((15 * math.sin(theta), 15 * math.cos(theta)), cfg)
powers = received_power_vector(channel, cb, cfg)
best = optimal_beam(powers)
print(f"best beam {best} steers at {math.degrees(cb.steering_angles[best]):.2f} deg")

db = 10 * np.log10(powers / powers.max() + 1e-30)
for k in range(best - 4, best + 5):
    bar = "#" * max(0, int(40 + db[k]))
    print(f"beam {k:2d} {db[k]:8.2f} dB {bar}")

# %%
# Noise on: labels come from the noisy sweep, the same way a testbed labels its data.
noisy = ScenarioConfig(n_beams=16, gps_jitter_m=1.0, image_bearing_jitter_deg=2.0, seed=7)
sample = generate_sample(noisy, 0)
print("gps", sample.gps, "label", sample.label, "image", sample.image.shape, sample.image.dtype)
print("true position (m):", tuple(round(v, 2) for v in sample.position))
