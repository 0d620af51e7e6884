from .learners import GBDTClassifier, KNNClassifier, PassThroughClassifier, RandomForestClassifier, log_loss
from .search import (
    KINDS, CellResult, MetaLearnerSpec, SearchError, SearchGrid, SearchResult, cross_val_search,
    stratified_kfold, write_search_csv,
)
from .stacking import (
    OUT_OF_FOLD, IN_SAMPLE, StackedFeatures, StackingClassifier, StackingError, StackResult, full_proba,
    out_of_fold_probabilities, read_proba_csv, run_stack, select_base_learners, stack_features,
    write_proba_csv,
)
from .tree import Tree, grow_classification_tree, grow_newton_tree

__all__ = [
    "GBDTClassifier", "KNNClassifier", "PassThroughClassifier", "RandomForestClassifier", "log_loss",
    "KINDS", "CellResult", "MetaLearnerSpec", "SearchError", "SearchGrid", "SearchResult",
    "cross_val_search", "stratified_kfold", "write_search_csv", "OUT_OF_FOLD", "IN_SAMPLE",
    "StackedFeatures", "StackingClassifier", "StackingError", "StackResult", "full_proba",
    "out_of_fold_probabilities", "read_proba_csv", "run_stack", "select_base_learners",
    "stack_features", "write_proba_csv", "Tree", "grow_classification_tree", "grow_newton_tree",
]
