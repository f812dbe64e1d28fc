"""Pixel-level noise-aware adversarial generation of realistic noisy images."""

__version__ = "0.1.0"

from .imaging import PairedDataset, MixSpec, load_dataset, save_dataset, mix_datasets  # noqa: F401
from .noise import AwgnConfig, PoissonGaussConfig, ToyCameraConfig  # noqa: F401
from .generator import GeneratorConfig, SMNet, generate_dataset  # noqa: F401
from .discriminator import DiscriminatorConfig, PixelDiscriminator  # noqa: F401
from .denoiser import DenoiserConfig, ResidualDenoiser  # noqa: F401
from .losses import LossWeights, FeatureExtractor  # noqa: F401
from .training import TrainConfig, DenoiserSchedule, FinetuneConfig, train_gan  # noqa: F401
from .evaluation import mmd_squared, psnr, ssim, domain_report  # noqa: F401
