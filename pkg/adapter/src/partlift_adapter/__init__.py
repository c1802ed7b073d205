"""Bridge from foundation-model outputs to the engine's file formats.

Strictly one-directional: images go in, TBT1 tensors and JSON sidecars come
out. No pipeline logic lives here."""

__version__ = "0.1.0"
