"""Backbone feature exporter.

Extracts intermediate convolutional features from VGG16 / ResNet50 /
ResNet101, resizes inputs to the 400x400 working resolution, and writes the
results as HSTN tensor files plus a line-oriented episode manifest. The
consumer side talks only through those files; no code is shared with it.
"""

__version__ = "0.1.0"
