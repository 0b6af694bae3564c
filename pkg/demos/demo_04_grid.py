"""
A small experiment grid, then the same grid from cache
======================================================

"""
import tempfile
import time
from pathlib import Path

from actionvocab.harness import ExperimentConfig, emit_results, run_grid
from actionvocab.synth import SynthSpec, synth_generate

root = Path(tempfile.mkdtemp())
synth_generate(SynthSpec(class_count=4, videos_per_class=20, seed=3), root / "data")

# a budget of about twenty average videos, so the two sampling modes pick differently
cfg = ExperimentConfig(manifest=str(root / "data" / "manifest.tsv"), K=[8, 16],
                       representations=["3a", "3d"], restarts=2, memory_gb=0.005,
                       output_dir=str(root / "results"))
print(len(cfg.cells()), "cells")

t0 = time.perf_counter()
records = run_grid(cfg, workers=4)
print(f"first run  {time.perf_counter() - t0:6.1f}s")

# every stage is content-addressed, so a second run only reads the cache
t0 = time.perf_counter()
records = run_grid(cfg, workers=4)
print(f"second run {time.perf_counter() - t0:6.1f}s")

written = emit_results(records, cfg.output_dir)
print(written["table"].read_text())
print(written["summary"].read_text())
