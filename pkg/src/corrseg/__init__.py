"""Few-shot segmentation by hypercorrelation: library and verification tools.

The package splits into tensor plumbing (tensor_io, ops, conv2d), the
differentiation engine (autodiff, layers), the model core (correlation,
conv4d, arch, encoder, decoder, model), and the harness around it (episodes,
metrics, trainer, checks, cli).
"""

from .arch import PRESETS, ArchSpec, LevelSpec, get_arch
from .autodiff import Node, Parameter, Tape, grad_check
from .conv4d import (CENTER_PIVOT, ORIGINAL, SEPARABLE, Conv4dConfig, Kernel4d,
                     conv4d_center_pivot, conv4d_original, conv4d_separable,
                     count_flops, count_params, decomposition_max_error,
                     dense_from_center_pivot)
from .correlation import (FeatureSet, Hypercorrelation,
                          build_hypercorrelation_pyramid, correlation_4d,
                          mask_support_features)
from .decoder import (Prediction, VoteConfig, cross_entropy, decode, hard_mask,
                      kshot_vote)
from .encoder import encode, mix_blocks, squeeze_block
from .episodes import (Episode, SupportShot, SyntheticEpisodeSpec,
                       generate_synthetic_episode, read_manifest, write_manifest)
from .metrics import EvalAccumulator, fbiou, miou
from .model import Model
from .tensor_io import read_tensor, write_tensor
from .trainer import (AdamConfig, AdamState, TrainConfig, adam_step, evaluate,
                      load_checkpoint, save_checkpoint, train_episodes)

__version__ = "0.1.0"
