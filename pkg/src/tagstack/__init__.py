"""Stacked audio tagging: clip features, out-of-fold meta-features and a
sample-re-weighted gradient-boosted level-2 classifier."""

from . import audio_io, augment, cache, dsp, evaluate, gbdt, level1, stacking, stats_features

__version__ = "0.1.0"

__all__ = ["audio_io", "augment", "cache", "dsp", "evaluate", "gbdt", "level1", "stacking",
           "stats_features"]
