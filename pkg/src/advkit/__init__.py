"""advkit: train small image classifiers, craft adversarial examples with
gradient-based attacks, characterize their effect, and evaluate defenses."""

from .attacks import (AttackOutcome, FastGradientSign, IterativeFastGradientSign,
                      SaliencyMapAttack, TraceStep, pairwise_select, saliency_map,
                      sign_noise_map, untargeted_descent_map)
from .campaign import CampaignData, get_or_train, run_campaign, sweep_attack_axis, sweep_model_axis
from .data import LabeledSet, load_dataset, load_idx_images, load_idx_labels
from .errors import (AdvkitError, ConfigurationError, FormatError, InputError,
                     TrainingError)
from .layers import Architecture, Conv, Dense, MaxPool, SoftmaxOut, cnn_architecture, mlp_architecture
from .metrics import (EasyHardRanking, SourceDestMatrix, average_doc, average_entropy,
                      degree_of_change, entropy, source_dest_matrix, success_rate,
                      top_k_easy_hard)
from .mitigation import (ConsensusDefense, MitigationReport, StreamMonitor,
                         VotingEnsemble, evaluate_defense, replay_monitor)
from .model import NeuralNetClassifier, PredictionBundle, cross_entropy_loss, softmax
from .pgm import read_pgm, write_pgm

__version__ = "0.1.0"

__all__ = [
    "AdvkitError", "Architecture", "AttackOutcome", "CampaignData",
    "ConfigurationError", "ConsensusDefense", "Conv", "Dense", "EasyHardRanking",
    "FastGradientSign", "FormatError", "InputError", "IterativeFastGradientSign",
    "LabeledSet", "MaxPool", "MitigationReport", "NeuralNetClassifier",
    "PredictionBundle", "SaliencyMapAttack", "SoftmaxOut", "SourceDestMatrix",
    "StreamMonitor", "TraceStep", "TrainingError", "VotingEnsemble",
    "average_doc", "average_entropy", "cnn_architecture", "cross_entropy_loss",
    "degree_of_change", "entropy", "evaluate_defense", "get_or_train",
    "load_dataset", "load_idx_images", "load_idx_labels", "mlp_architecture",
    "pairwise_select", "read_pgm", "replay_monitor", "run_campaign",
    "saliency_map", "sign_noise_map", "softmax", "source_dest_matrix",
    "success_rate", "sweep_attack_axis", "sweep_model_axis", "top_k_easy_hard",
    "untargeted_descent_map", "write_pgm",
]
