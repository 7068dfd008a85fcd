"""Adversarial-robustness workbench for 3D point cloud classification.

Subpackages cover the full pipeline: synthetic dataset generation
(:mod:`pcld.geometry`), layered classifiers (:mod:`pcld.models`), diffusion
denoisers and purification (:mod:`pcld.diffusion`), white-box attacks
(:mod:`pcld.attacks`), purification defenses (:mod:`pcld.defenses`), and the
evaluation harness (:mod:`pcld.bench`).
"""

__version__ = "0.1.0"
