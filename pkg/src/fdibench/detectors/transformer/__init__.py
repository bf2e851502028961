"""Window-attention detector: network, training loop, and adapter."""

from .config import CLASS_NAMES, N_CLASSES, LossWeights, NetConfig, TrainConfig
from .network import (ForwardResult, anomaly_attention, embed_window, forward,
                      grad, loss_terms, positional_encoding, prior_rows,
                      sym_kl_rows)
from .params import (init_params, load_checkpoint, param_count, param_spec,
                     save_checkpoint)
from .detector import (TransformerDetector, apply_onset_rule, stream_scores,
                       window_scores)
from .train import (TrainResult, dataset_loss, extract_windows, train,
                    window_label)

__all__ = [
    "CLASS_NAMES", "N_CLASSES", "LossWeights", "NetConfig", "TrainConfig",
    "ForwardResult", "anomaly_attention", "embed_window", "forward", "grad",
    "loss_terms", "positional_encoding", "prior_rows", "sym_kl_rows",
    "init_params", "load_checkpoint", "param_count", "param_spec",
    "save_checkpoint", "TransformerDetector", "apply_onset_rule",
    "stream_scores", "window_scores", "TrainResult", "dataset_loss",
    "extract_windows", "train", "window_label",
]
