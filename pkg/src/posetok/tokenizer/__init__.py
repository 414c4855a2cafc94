from .codebook import Codebook, code_reset, ema_update, quantize, soft_quantize, utilization
from .data import load_poses, noise_augment, synthetic_pose_manifold, to_rot6d
from .loss import reconstruction_loss, vq_loss
from .model import Decoder, Encoder, PoseVQVAE, TokenHead, TokenizerConfig
from .train import evaluate, load_tokenizer, save_tokenizer, train_tokenizer
