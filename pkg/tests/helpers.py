"""Small builders shared by several test modules."""
import numpy as np

from actionvocab.features import DatasetManifest, Split, VideoEntry, write_features


def skewed_manifest(root, layout, videos_per_class, features_per_video, train_fraction=0.5,
                    seed=0):
    """Random-feature manifest with per-class video counts and per-video lengths."""
    rng = np.random.default_rng(seed)
    entries, train, test = [], set(), set()
    for c, (nv, nf) in enumerate(zip(videos_per_class, features_per_video)):
        n_train = int(round(nv * train_fraction))
        for i in range(nv):
            vid = f"k{c}v{i}"
            rel = f"f/{vid}.f32"
            write_features(rng.normal(size=(nf, layout.total_dims)) + c, layout, root / rel)
            entries.append(VideoEntry(vid, c, nf, rel))
            (train if i < n_train else test).add(vid)
    return DatasetManifest("skew", tuple(f"c{c}" for c in range(len(videos_per_class))),
                           entries, [Split(train, test)], layout, str(root))


def counts_manifest(counts, labels=None, layout=None):
    """Manifest whose files are never read (count-only arithmetic)."""
    labels = labels if labels is not None else [i % 2 for i in range(len(counts))]
    entries = [VideoEntry(f"v{i}", int(l), int(n), f"v{i}.f32")
               for i, (n, l) in enumerate(zip(counts, labels))]
    C = max(labels) + 1
    train = {e.video_id for e in entries}
    kw = {} if layout is None else {"layout": layout}
    return DatasetManifest("counts", tuple(f"c{c}" for c in range(C)), entries,
                           [Split(train, set())], **kw)


def random_vocab(kind, scheme, K, layout, class_count=1, per_category=False, pca_dims=4,
                 seed=0):
    """A VocabularySet with random (unfitted) models, for shape and contract tests."""
    from actionvocab.vocabulary import Codebook, GmmModel, PcaModel, VocabularySet

    rng = np.random.default_rng(seed)
    vs = VocabularySet(kind, scheme, per_category, K, layout, class_count, pca_dims=pca_dims)
    if kind != "bof":
        for name, dims in layout.components:
            q = np.linalg.qr(rng.normal(size=(dims, pca_dims)))[0].T
            vs.pcas[name] = PcaModel(rng.normal(size=dims) * 0.1, q, np.ones(pca_dims), name)
    for key in vs.keys:
        d = vs.block_input_dims(key)
        for cat in vs.categories:
            if kind == "fisher":
                w = rng.dirichlet(np.ones(K))
                vs.gmms[(key, cat)] = GmmModel(w, rng.normal(size=(K, d)),
                                               rng.uniform(0.5, 2.0, size=(K, d)), key, cat)
            else:
                vs.codebooks[(key, cat)] = Codebook(rng.normal(size=(K, d)), key, cat)
    return vs
