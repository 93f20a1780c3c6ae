"""Core modules: data, network, attribution, MC dropout, linear baseline"""

from .attribution import BackProjectionPolicy, FeatureRanking, InputPattern, RankedFeature, back_project, rank_features
from .baselines import LinearModel, SVMConfig, predict_linear, train_linear_svm
from .bayesian import BayesianPrediction, DropoutPolicy, SubsetSuite, mc_dropout_predict
from .connectivity import ConnectivityMatrix, Dataset, SubjectRecord, SyntheticConfig, generate_synthetic
from .errors import ConnLabError
from .network import ForwardMode, Network, NetworkSpec, TrainConfig, forward, init_network, predict, train

__all__ = [
    "BackProjectionPolicy",
    "FeatureRanking",
    "InputPattern",
    "RankedFeature",
    "back_project",
    "rank_features",
    "LinearModel",
    "SVMConfig",
    "predict_linear",
    "train_linear_svm",
    "BayesianPrediction",
    "DropoutPolicy",
    "SubsetSuite",
    "mc_dropout_predict",
    "ConnectivityMatrix",
    "Dataset",
    "SubjectRecord",
    "SyntheticConfig",
    "generate_synthetic",
    "ConnLabError",
    "ForwardMode",
    "Network",
    "NetworkSpec",
    "TrainConfig",
    "forward",
    "init_network",
    "predict",
    "train",
]
