from .fid import FeatureSet, RandomConvEmbedder, compute_fid
from .losses import adversarial_loss, adversarial_loss_logits, feature_matching_loss, total_generator_loss
from .networks import LocalEnhancer, MultiscaleDiscriminator
from .training import (Checkpoint, DiscriminatorCollapse, GanBundle, GanConfig, build_gan,
                       load_checkpoint, save_checkpoint, select_checkpoint, train_gan, translate,
                       translate_batch)

__all__ = [
    "FeatureSet", "RandomConvEmbedder", "compute_fid",
    "adversarial_loss", "adversarial_loss_logits", "feature_matching_loss", "total_generator_loss",
    "LocalEnhancer", "MultiscaleDiscriminator",
    "Checkpoint", "DiscriminatorCollapse", "GanBundle", "GanConfig", "build_gan",
    "load_checkpoint", "save_checkpoint", "select_checkpoint", "train_gan", "translate",
    "translate_batch",
]
