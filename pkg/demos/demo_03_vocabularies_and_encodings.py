"""
Vocabularies and the four encodings
===================================

"""
import tempfile
from pathlib import Path

import numpy as np

from actionvocab.encoders import encode, encode_dataset
from actionvocab.features import load_video
from actionvocab.sampler import SamplingConfig, build_pool
from actionvocab.synth import SynthSpec, synth_generate
from actionvocab.vocabulary import fit_vocabularies

m, _ = synth_generate(SynthSpec(class_count=3, videos_per_class=10, seed=2),
                      Path(tempfile.mkdtemp()))
pool = build_pool(m, SamplingConfig("balanced", 1.6, K=8, seed=0))
print("pool:", pool.rows.shape)

# per-component (2a) and joint (2b) vocabularies for each encoding
K = 8
setups = {
    "bof 2a": ("bof", False, "2a"),
    "bof per-category 2b": ("bof", True, "2b"),
    "vlad 2a": ("vlad", False, "2a"),
    "fisher 2a": ("fisher", False, "2a"),
    "fisher 2b": ("fisher", False, "2b"),
}
video = load_video(m, m.videos[0])
for name, (kind, per_cat, scheme) in setups.items():
    vs = fit_vocabularies(pool, K, scheme, per_cat, seed=0, kind=kind, restarts=2)
    v = encode(video, vs).vector
    print(f"{name:<20} D={len(v):>5}  L1={np.abs(v).sum():.3f}  L2={np.linalg.norm(v):.3f}")

# whole-dataset encoding keeps manifest order
enc = encode_dataset(m, vs)
print("encoded dataset:", enc.X.shape, "labels", np.bincount(enc.labels))
