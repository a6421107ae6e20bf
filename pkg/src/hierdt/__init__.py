"""Desk-scale workbench for hierarchical decentralized training and inference-time optimization."""
from .data import ClientDataset, Sample, read_dataset, synthetic_corpus, write_dataset
from .errors import (ConfigurationError, DegenerateWeightsError, DomainError, EmptyInputError, NumericError,
                     StructuralError, VocabularyMismatchError, WorkbenchError)
from .evaluation import EvalReport, evaluate
from .fed import AggregationMetric, EvalConfig, FLConfig, RoundRecord, aggregate, run_fl, score
from .grammar import EOS, GrammarSpec, Vocab, canonical_completion, check_syntax
from .hierarchy import HierarchyConfig, run_flat_fl, run_hierarchy, run_local_only
from .ledger import CommLedger
from .merge import MergeConfig, merge, merge_dare, merge_weighted
from .model import ParamLayout, ParamVector, ToyModel, cross_entropy, train_local
from .pardecode import (DecodeStats, DraftHeads, TokenTree, build_tree, online_kl_update, simulate_decode,
                        verify)
from .partition import PartitionPlan, partition_dirichlet, partition_groups
from .sampling import SamplingStrategy, generate
from .trueput import (LatencyModel, PassStats, TrueputProfile, optimal_k, pass_at_k_analytic,
                      pass_at_k_unbiased, strategy_grid_search, trueput)

__version__ = "0.1.0"
