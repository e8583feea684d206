"""Data module for EMT"""

from .database import DatabaseManager
from .dataset import Batch, BatchLoader, SamplePair, SrDataset, augment, sample_patch
from .images import ImageRGB, bicubic_resize, load_png, rgb_to_y, save_png
from .models import Base, EvaluationRecord, TrainingRun

__all__ = [
    'DatabaseManager', 'Base', 'TrainingRun', 'EvaluationRecord',
    'ImageRGB', 'load_png', 'save_png', 'bicubic_resize', 'rgb_to_y',
    'SamplePair', 'SrDataset', 'Batch', 'BatchLoader', 'sample_patch', 'augment',
]
