from .augment import flip_augment, flip_pose, flip_test
from .loop import TrainConfig, TrainResult, TrainingDiverged, evaluate, train
from .metrics import (
    AUC_THRESHOLDS_MM,
    PCK_THRESHOLD_MM,
    acc_err,
    all_metrics,
    auc,
    joint_errors,
    mpjpe,
    mpjve,
    pck,
    pose_loss,
)
from .optim import AdamW, OptConfig, OptState, lr_at_epoch
from .synth import SynthConfig, bbox_diagonal, project, synth_dataset

loss = pose_loss
