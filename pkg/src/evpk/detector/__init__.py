from .config import DetectorConfig, config_from_text, config_to_text, load_config, save_config
from .model import DMANet, DetectorState, backbone_forward, dmanet_step, make_anchors, skip_sum
from .targets import (
    Detection,
    Targets,
    assign_targets,
    decode_and_nms,
    focal_loss,
    nms,
    smooth_l1_loss,
)
from .train import TrainingError, evaluate, pillar_sweep, predict_sequence, saturation_k, train_sequences
