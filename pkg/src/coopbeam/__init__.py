"""Cooperative multi-BS beam prediction: simulator, oracle, model, harness."""

from .baselines import OraclePredictor, PersistencePredictor, UniformRandomPredictor
from .codebook import GainVector, beam_gain, gain_vector, joint_label, make_codebook, split_label
from .dataset import (
    Batch,
    CsiWindow,
    WindowDataset,
    build_windows,
    load_dataset,
    save_dataset,
    split,
    subsample,
)
from .errors import (
    ConfigError,
    CoopbeamError,
    DataFormatError,
    DivergedError,
    GenerationAuditError,
)
from .metrics import MetricReport, evaluate, format_summary, topk_set
from .model import CrsModel, ModelConfig, ModelDims
from .scenario import ScenarioConfig, load_preset, load_scenario, resolve_scenario, save_scenario
from .simulator import build_trajectory, evolve_paths, synth_channel
from .sweeps import ExperimentSpec, ablate_gate, compare_warmup, sweep_fraction, sweep_snr, transfer_eval
from .train import TrainConfig, TrainResult, run_training

__all__ = [
    "Batch",
    "ConfigError",
    "CoopbeamError",
    "CrsModel",
    "CsiWindow",
    "DataFormatError",
    "DivergedError",
    "ExperimentSpec",
    "GainVector",
    "GenerationAuditError",
    "MetricReport",
    "ModelConfig",
    "ModelDims",
    "OraclePredictor",
    "PersistencePredictor",
    "ScenarioConfig",
    "TrainConfig",
    "TrainResult",
    "UniformRandomPredictor",
    "WindowDataset",
    "ablate_gate",
    "beam_gain",
    "build_trajectory",
    "build_windows",
    "compare_warmup",
    "evaluate",
    "evolve_paths",
    "format_summary",
    "gain_vector",
    "joint_label",
    "load_dataset",
    "load_preset",
    "load_scenario",
    "make_codebook",
    "resolve_scenario",
    "run_training",
    "save_dataset",
    "save_scenario",
    "split",
    "split_label",
    "subsample",
    "sweep_fraction",
    "sweep_snr",
    "synth_channel",
    "topk_set",
    "transfer_eval",
]

__version__ = "0.1.0"
