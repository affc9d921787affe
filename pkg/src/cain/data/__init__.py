from cain.data.batching import Batch, batch_iterator, make_batch
from cain.data.io import iter_records, load_dataset, save_dataset
from cain.data.records import BehaviorItem, Dataset, Sample, UserProfile, Vocab
from cain.data.synthetic import (
    GeneratorConfig,
    bayes_oracle,
    generate_synthetic,
    oracle_probabilities,
    temporal_split,
)

__all__ = [
    "Batch",
    "BehaviorItem",
    "Dataset",
    "GeneratorConfig",
    "Sample",
    "UserProfile",
    "Vocab",
    "batch_iterator",
    "bayes_oracle",
    "generate_synthetic",
    "iter_records",
    "load_dataset",
    "make_batch",
    "oracle_probabilities",
    "save_dataset",
    "temporal_split",
]
