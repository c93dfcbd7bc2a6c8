"""Design-space exploration for quantized-neural-network dataflow accelerators."""

__version__ = "0.1.0"
