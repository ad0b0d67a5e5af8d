"""Semantically conditioned negative sampling for contrastive learning.

Class- and instance-level hard-negative distributions, a momentum contrast
memory, latent-mixup pseudo-negatives, distillation losses with analytic
gradients, coupon-collector sample-complexity calculators, and a desk-scale
training harness with a batch CLI.
"""

from .config import ExperimentConfig, parse_config, serialize_config
from .coverage import ACTIVE_BACKEND
from .data import generate_gaussian_mixture, load_feature_csv
from .embedding import (TopKNeighborTable, cosine_similarity, l2_normalize_rows,
                        pairwise_similarity, temperature_softmax, topk_neighbors)
from .harness import (convergence_experiment, pretrain_teacher, train_kd,
                      train_supervised)
from .losses import (LossEvaluation, centered_alignment, check_gradient,
                     cross_entropy, infonce, kd_combined, kld, mixup, mixup_kld,
                     pearson_triplet_loss, triplet_cka_loss)
from .memory import ContrastMemory, init_memory
from .mlp import MlpEncoder, evaluate
from .sampling import (ContrastiveBatch, DatasetIndex, NegativeSamplingDistribution,
                       build_class_scns, build_instance_scns, build_uniform,
                       compose_batch, draw_negatives)
from .theory import (AlignmentReport, CcpEstimate, alignment_report, ccp_batched,
                     ccp_topk_coverage_mc, ccp_unequal, ccp_uniform_draws,
                     mi_bound_uniform)
from .wordvec import load_word_embeddings

__version__ = "0.1.0"
