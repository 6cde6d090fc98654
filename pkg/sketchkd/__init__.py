# Cap numpy/torch thread pools before they are imported; SKETCHKD_THREADS overrides the default of 1
import os
_threads = os.environ.get('SKETCHKD_THREADS', '1')
os.environ['OMP_NUM_THREADS'] = _threads
os.environ['OPENBLAS_NUM_THREADS'] = _threads
os.environ['NUMEXPR_NUM_THREADS'] = _threads
os.environ['MKL_NUM_THREADS'] = _threads

import torch
torch.set_num_threads(int(_threads))

# Other initialization
from sketchkd.config import Hyperparameters, load_config, save_config, config_hash, paper_default_profile, desk_profile, tiny_profile
from sketchkd.backbone import PyramidBackbone, BackboneOutput, attention_layer
from sketchkd.data import Instance, SketchPhotoDataset, TripletBatch, PhotoTripletBatch, generate_synthetic, load_directory, save_directory, structural_augment, augment, sample_triplet_batch, sample_photo_triplet_batch
from sketchkd.losses import squared_distance, cross_modal_triplet, intra_modal_triplets, combined_training_loss, contrastive_alternative, LossBreakdown, TripletEmbeddings
from sketchkd.distill import FeatureBank, NeighbourSet, build_bank, knn, similarity_distribution, kl_consistency, distillation_loss
from sketchkd.ema import EmaState, ema_init, ema_update, ema_swap_for_eval
from sketchkd.trainer import pretrain_teacher, train_student, run_ablation, save_checkpoint, load_checkpoint
from sketchkd.evaluation import RetrievalResult, retrieval, acc_at_q, stability_trace, data_scaling_study, cross_category_harness
from sketchkd.experiment import Experiment, RunManifest
from sketchkd.exceptions import ConfigError, NonFiniteLossError, NonFiniteActivationError, DatasetError, BankMismatchError, EmaSwapError
