"""Train fusion and both single-modality baselines on a small synthetic set and compare them.

The full desk run (2000 samples, 20 epochs) lives in the acceptance suite; this one
is cut down to finish in a couple of minutes on one core.
"""

# %%
import tempfile

from mmbeam.channel import ScenarioConfig, generate_dataset
from mmbeam.cli import comparison_table
from mmbeam.data import load_manifest, split_dataset
from mmbeam.metrics import compute_report
from mmbeam.training import TrainConfig, evaluate, train

root = tempfile.mkdtemp()
scenario = ScenarioConfig(n_beams=16, gps_jitter_m=1.0, image_bearing_jitter_deg=2.0,
                          gps_outlier_prob=0.3, image_occlusion_prob=0.3, seed=11)
generate_dataset(scenario, 600, root)
manifest = load_manifest(f"{root}/manifest.jsonl")
splits = split_dataset(manifest, 0)
print(len(splits.train), "train /", len(splits.validation), "val /", len(splits.test), "test")

# %%
reports = []
for variant in ("position-only", "vision-only", "fusion"):
    result = train(manifest, splits, TrainConfig(variant=variant, epochs=6))
    bundle = evaluate(result.predictor, manifest, splits.test, result.normalizer)
    reports.append(compute_report(bundle.logits, bundle.labels, bundle.powers,
                                  manifest.metadata["noise_floor"], k_max=5, variant=variant))
    print(f"{variant:14s} best epoch {result.best_epoch}  top-1 {100 * reports[-1].accuracy[0]:.1f}%")

# %%
header, rows = comparison_table(reports)
print("  ".join(f"{h:>22s}" for h in header))
for row in rows:
    print("  ".join(f"{v:22.4f}" if isinstance(v, float) else f"{v:>22}" for v in row))
