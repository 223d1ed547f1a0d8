"""From-scratch numpy U-Net for leg segmentation."""

from .infer import SegmentationMask, read_mask, unet_forward, write_mask
from .loss import occupied_positive_weight, positive_weight, weighted_bce, weighted_bce_with_logits
from .serialize import load_model, save_model
from .train import TrainConfig, TrainResult, train
from .unet import UNet, UNetConfig

__all__ = [
    "SegmentationMask", "TrainConfig", "TrainResult", "UNet", "UNetConfig", "load_model",
    "occupied_positive_weight", "positive_weight", "read_mask", "save_model", "train", "unet_forward", "weighted_bce",
    "weighted_bce_with_logits", "write_mask",
]
