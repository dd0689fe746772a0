"""Cross-domain masked autoencoding with Fourier style mixing."""

__version__ = "0.1.0"

from .errors import TrainingDiverged, ValidationError
from .fourier_aug import (
    FourierPlanes,
    StyleMixConfig,
    content_mix_baseline,
    cp_style_mix,
    fft_compose,
    fft_decompose,
    style_view,
)
from .patching import MaskPlan, PatchSequence, patchify, sample_mask, unpatchify
from .model import (
    DecoderConfig,
    DiMAE,
    EncoderConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .objective import ReconTarget, batch_loss, make_target, masked_mse
from .data import (
    DomainRegistry,
    ImageDataset,
    SyntheticSpec,
    generate_synthetic,
    load_folder,
    stratified_batches,
)
from .train import TrainConfig, lr_at, pretrain
from .evaluation import (
    ablation_runner,
    cross_domain_protocol,
    export_features,
    extract_features,
    linear_probe,
)
