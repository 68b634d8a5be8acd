"""erdtrainer: trains the ERD U-Net on exported corpora and emits
interchange weight files plus inference parity fixtures."""

from .augment import AugmentationPolicy, augment_pair
from .corpus import CorpusPair, load_corpus, split_by_sample
from .fixtures import export_fixtures
from .network import ErdUNet
from .train import (TrainConfig, TrainingDiverged, TrainResult, export_weights,
                    train_unet, write_history_csv, zero_predictor_loss)
from .weights_io import read_weights, write_weights

__version__ = "0.1.0"
