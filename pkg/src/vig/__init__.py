"""Linear-complexity visual sequence modeling: gated linear attention scans,
bidirectional fusion, the ViG block and model, a from-scratch gradient
engine, and FLOPs/latency accounting."""

__version__ = "0.1.0"
