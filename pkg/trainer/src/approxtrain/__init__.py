"""approxtrain: train small residual CNNs and export them in the approxlab
quantized-network format."""

__version__ = "0.1.0"

from .datasets import (DatasetUnavailable, load_cifar10, load_mnist,
                       make_textures, write_dataset_file)
from .export import (ExportManifest, ExportRefused, export_quantized,
                     int8_accuracy, int8_forward, train_and_export)
from .model import (ARCHS, RESNET8, RESNET8_SMALL, ArchConfig, ResidualNet,
                    eval_model, train_model)
