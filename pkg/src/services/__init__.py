"""Service module for EMT: training, checkpoints, metrics, analysis, evaluation, registry"""

from .analysis import cka_heatmap, mad_table
from .checkpoint import Checkpoint, crc64, load_checkpoint, save_checkpoint
from .evaluation import EvalReport, Upscaler, evaluate
from .metrics import cka, cka_from_grams, mean_attention_distance, psnr_y, ssim_y
from .optimizer import OptimizerState, adam_step, cosine_lr
from .registry import RunRegistry
from .training import Trainer, l1_loss, train

__all__ = [
    'cka_heatmap', 'mad_table',
    'Checkpoint', 'crc64', 'load_checkpoint', 'save_checkpoint',
    'EvalReport', 'Upscaler', 'evaluate',
    'cka', 'cka_from_grams', 'mean_attention_distance', 'psnr_y', 'ssim_y',
    'OptimizerState', 'adam_step', 'cosine_lr',
    'RunRegistry',
    'Trainer', 'l1_loss', 'train',
]
