"""eyesim: deterministic simulator and performance-analysis toolkit for a
sparse row-stationary DNN accelerator with a hierarchical mesh NoC."""

__version__ = "0.1.0"
