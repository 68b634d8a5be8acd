"""dynscan: dynamic sparse-sampling simulator for multichannel images.

Reconstructs partially measured samples by inverse-distance weighting,
computes ground-truth reduction-in-distortion maps, trains and evaluates
ERD regressors, and runs pointwise/linewise simulated acquisitions.
"""

from .core import (ChannelStack, GridSpec, MeasuredValues, MeasurementMask,
                   apply_mask, physical_distance)
from .ingest import (MzWindow, RawRow, SampleMeta, generate_phantom,
                     integrate_window, load_sample_dir, realign_row,
                     target_columns, write_sample_dir)
from .recon import Reconstruction, reconstruct
from .rd import (DynamicWindow, RdMap, RdParams, StaticWindow, approx_rd,
                 average_rd, exact_rd, gaussian_window_sum, sigma)
from .models import (ErdMap, LsModel, MlpModel, OracleModel, RandomModel,
                     erd_for, extract_features, fit_ls, fit_mlp, load_model,
                     model_input, save_model)
from .unet import UNetModel, load_unet_weights, unet_infer, write_unet_weights
from .acquire import (AcquisitionConfig, AcquisitionError, AcquisitionRun,
                      LinewiseMode, PointwiseMode, RowSets, StepTrace,
                      initial_mask, run_acquisition, select_linewise,
                      select_pointwise)
from .experiment import (Metrics, TrainingCorpus, erd_psnr_auc,
                         generate_training_corpus, optimize_c, psnr,
                         run_metrics, train_model)

__version__ = "0.1.0"
