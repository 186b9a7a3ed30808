"""Graph-attention fraud scoring over transaction graphs, in numpy."""

__version__ = "0.1.0"

from .graph import EdgeRule, EncoderConfig, TxGraph, add_transaction, build_graph, evict_before
from .metrics import average_precision, metrics_report, monthly_report, roc_auc
from .model import TgtnConfig, backward, forward, init_params, load_checkpoint, save_checkpoint
from .stream import RuleEngine, WindowConfig, consistency_check, prescreen, replay
from .train import TrainConfig, kfold_cv, rfm_features, train, train_logistic_baseline
from .txgen import Dataset, GenConfig, Transaction, generate, load_dataset, save_dataset
