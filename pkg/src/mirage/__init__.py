"""Randomized, tag/data-decoupled last-level cache models and their security analysis."""

from .analytic import (StorageVariant, associativity_table, calibrate_p0, installs_per_sae,
                       installs_per_sae_with_relocation, log10_installs_per_sae, steady_state,
                       storage_report, time_per_sae)
from .ballsim import BallSim, BallSimConfig, SpillStats, measure_p0, run_parallel, run_trial
from .baselines import BaselineKind, RandomSkewCache, SetAssocLRU, VWayCache, make_baseline
from .cache import InstallOutcome, LookupResult, MirageCache, OutcomeKind
from .geometry import CacheGeometry
from .harness import (ExperimentConfig, ExperimentReport, TraceSpec, generate_trace,
                      run_experiment)
from .indexing import SkewIndexer, SkewKeySet, derive_index, prince_reference
from .relocation import RelocationPolicy, RelocationResult, attempt_relocation

__version__ = "0.1.0"
