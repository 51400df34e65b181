"""GAN synthesis, image-quality metrics and presentation-attack evaluation for NIR periocular images."""

__version__ = "0.1.0"
