"""
Synthetic descriptor stores and their statistics
================================================

"""
import tempfile
from pathlib import Path

import numpy as np

from actionvocab.features import dataset_stats, load_video, read_manifest
from actionvocab.synth import SynthSpec, synth_generate

out = Path(tempfile.mkdtemp()) / "data"

# six classes, forty videos each, per-video lengths drawn around 150
spec = SynthSpec(count_spread=0.4, seed=0)
manifest, model = synth_generate(spec, out)
print("wrote", len(manifest.videos), "videos under", out)

# the manifest on disk is plain TSV; reading it back gives the same videos
m = read_manifest(out / "manifest.tsv")
assert m.videos == manifest.videos

for label, value in dataset_stats(m).as_rows():
    print(f"  {label:<12}{value:>10}")

# one video is an (n, 426) float32 matrix, split into five named components
x = load_video(m, m.videos[0])
print("first video:", x.shape, x.dtype)
for name, sl in m.layout.slices().items():
    print(f"  {name:<5} dims {sl.stop - sl.start:>3}  mean {x[:, sl].mean():+.3f}")

# the class structure lives in per-component atom weights
w = model.class_weights["hog"]
print("hog weight overlap between class 0 and 1:", np.minimum(w[0], w[1]).sum().round(3))
