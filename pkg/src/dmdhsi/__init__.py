"""Simulation and processing pipeline for a DMD-scanned pushbroom hyperspectral imager."""

from dmdhsi.scene import SpectralCube, RgbResponse, SceneSpec
from dmdhsi.optics import DmdPattern, SensorParams, JitterModel, SliceFrame, RgbFrame
from dmdhsi.controller import ScanPlan, TimingParams, AcquisitionRecord

__version__ = "0.1.0"

__all__ = [
    "SpectralCube",
    "RgbResponse",
    "SceneSpec",
    "DmdPattern",
    "SensorParams",
    "JitterModel",
    "SliceFrame",
    "RgbFrame",
    "ScanPlan",
    "TimingParams",
    "AcquisitionRecord",
]
