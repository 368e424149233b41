"""EM-test homogeneity screening for finite mixture models."""

from ._backend import NAME as BACKEND
from .asymptotics import (BMatrices, LimitSample, cone_sup, estimate_b_matrices,
                          pvalue_chisq, pvalue_montecarlo, sample_limit_dist)
from .emtest import EmConfig, EmTestResult, MixtureState, em_test_statistic, run_em
from .evalmetrics import ari, bench_case, kmeans, min_model_size, rank_features, retained_counts
from .families import (DomainError, Family, deriv_bundle, homogeneous_mle, log_pdf, make_family,
                       weighted_mle)
from .screening import (DataMatrix, IngestError, ScreenReport, bh_adjust, chisq_gof_screen,
                        combine_batches, downsample_counts, screen, threshold)
from .simulate import SimDataset, SimScenario, gen_nb_case, gen_normal_case, generate, scenario

__version__ = "0.1.0"
