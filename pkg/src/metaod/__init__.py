"""Metamorphic testing of black-box object detectors."""

from .campaign import CampaignConfig, CampaignSummary, plan_trials, run_campaign
from .core import BBox, Detection, DetectionSet, ImageBuffer
from .errors import MetaODError
from .metrics import MetricsConfig, map_score, voc_ap
from .oracle import Trial, run_trial

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "CampaignConfig",
    "CampaignSummary",
    "Detection",
    "DetectionSet",
    "ImageBuffer",
    "MetaODError",
    "MetricsConfig",
    "Trial",
    "map_score",
    "plan_trials",
    "run_campaign",
    "run_trial",
    "voc_ap",
]
