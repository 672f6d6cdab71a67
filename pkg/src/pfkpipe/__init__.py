"""Resource-constrained prediction of logarithmic protein folding rates.

End-to-end pipeline: CSV ingestion and A/B splits, preprocessing (outlier
removal, temperature standardization, Z-score normalization, smoothed target
encoding), correlation-based feature subsets, a sparse-projection shallow-tree
regressor with sub-kilobyte serialized models, strategy-grid evaluation,
latency benchmarking, and a feedback-driven hyperparameter optimizer.
"""

from .bonsai import (BonsaiConfig, BonsaiModel, TrainReport, deserialize, fit,
                     hard_threshold, init_model, model_size, predict,
                     predict_batch, serialize, train)
from .dataset import (Dataset, ProteinRecord, SplitPair, parse_records,
                      serialize_records, split_ab, synthesize_dataset,
                      train_test_partition)
from .errors import (EmptySubsetError, ModelFormatError, ParseError,
                     PipelineError, ValidationError)
from .evaluate import (LatencyStats, MetricsReport, StrategyCell,
                       StrategyConfig, batch_trend, mae, measure_latency, mse,
                       r2, run_strategy)
from .features import (CorrelationRanking, FeatureSubset, pearson_abs,
                       rank_features, subset_intersection, subset_union, top_n)
from .feedback import SweepSpec, analyze, optimize_loop, sweep
from .preprocess import (FittedPreprocessor, PreprocessConfig, apply_zscore,
                         encode_category, filter_outliers, fit_iqr,
                         fit_m_estimate, fit_pipeline, fit_zscore,
                         standardize_rate)

__version__ = "0.1.0"
