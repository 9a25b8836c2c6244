"""Zero-shot object navigation over a multi-modal 3D scene graph."""

__version__ = "0.1.0"
