"""Soft-clustering out-of-distribution detection with NNK-Means.

Typical use::

    from nnkood import TrainConfig, fit, score, evaluate

    model = fit("ec_nnk", X_train, config=TrainConfig(m_init=256, lam=0.05))
    report = evaluate(score(model, X_test), is_ood)
"""

from .data import (Dataset, generate_synthetic, l2_normalize, load_embeddings, load_labels,
                   save_embeddings, save_labels)
from .detectors import (METHODS, DetectorModel, decide, fit, score, score_classwise, score_knn,
                        score_logits, score_mahalanobis, score_nnk, threshold_for_id_recall)
from .dictionary import (Dictionary, TrainConfig, dictionary_update, kmeanspp_init,
                         sparse_code_dataset, train_kmeans, train_nnk_means, update_probabilities)
from .errors import *  # noqa: F401,F403
from .kernels import KernelSpec, gram, knn_atoms, solve_spd_ridge
from .metrics import MetricsReport, aupr, auroc, evaluate, fpr_at_tpr, time_scoring
from .modelio import load_model, save_model
from .nnk import NnkSolution, ec_nnk_solve, nnk_solve, reconstruction_error

__version__ = "0.1.0"
