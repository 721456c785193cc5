"""Counterfactual segmentation-data synthesis and open-world segmentation training at desk scale."""

__version__ = "0.1.0"
