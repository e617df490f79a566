"""Loss, optimizer, scheduler, training loop, metrics and benchmarking."""
from .bench import BenchResult, throughput_benchmark
from .loss import masked_mse
from .metrics import ACCURACY_LABEL, MetricsRow, compute_metrics, evaluate, predict_split
from .optim import AdamW, PlateauScheduler, clip_global_norm
from .trainer import TrainConfig, TrainResult, split_loss, train

__all__ = [
    "BenchResult", "throughput_benchmark", "masked_mse", "ACCURACY_LABEL", "MetricsRow",
    "compute_metrics", "evaluate", "predict_split", "AdamW", "PlateauScheduler", "clip_global_norm",
    "TrainConfig", "TrainResult", "split_loss", "train",
]
