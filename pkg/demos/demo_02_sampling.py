"""
Memory-bounded pools: balanced versus uniform
=============================================

"""
import tempfile
from pathlib import Path

from actionvocab.features import ComponentLayout
from actionvocab.sampler import (SamplingConfig, build_pool, compute_vmax,
                                 mean_feature_count, pool_cap)
from actionvocab.synth import SynthSpec, synth_generate

# budget arithmetic first: how many average videos fit in 1.6 GB?
print("V_max at 9000 features/video:", compute_vmax(1.6, 9000))
print("pool caps:", {K: pool_cap(K) for K in (4, 32, 256)})

# a skewed store: class 0 has five times the videos, class 2 much longer videos
spec = SynthSpec(class_count=3, videos_per_class=[50, 10, 10],
                 features_per_video=[40, 40, 400], layout=ComponentLayout((("a", 8),)),
                 seed=1)
out = Path(tempfile.mkdtemp())
m, _ = synth_generate(spec, out)
print("mean features per video:", round(mean_feature_count(m), 1))

# a tight budget makes the choice of videos matter
budget = 40 * mean_feature_count(m) * m.layout.feature_size_gb
for mode in ("balanced", "uniform"):
    pool = build_pool(m, SamplingConfig(mode, budget, K=1, seed=0))
    print(f"{mode:>9}: {len(pool):>6} rows, per class {pool.class_counts().tolist()}")
