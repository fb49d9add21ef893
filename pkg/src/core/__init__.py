"""Core module: tensors and autodiff, random streams, file formats, configuration and logging."""
