"""davnav: a deterministic benchmark for dynamic audio-goal navigation.

An agent in an unmapped occupancy grid must intercept a moving,
sound-emitting target using binaural spectrograms and a range scan. The
package provides the grid world, a parametric binaural renderer with the
exact published spectrogram pipeline, the complex-audio randomization
scenarios, the moving-target motion model, an episode engine with raw and
waypoint action modes, interception-oracle scoring (SR/SPL/SNA and the
dynamic DSPL/DSNA variants), scripted baselines, a line-delimited wire
protocol for external agents, and a benchmark CLI.
"""

from .acoustics import (AcousticParams, BinauralFrame, DecayTail,
                        compute_spectrogram, doa_and_distance, mix,
                        render_source)
from .dynamics import TargetState, spawn_target, step_target
from .engine import (Engine, EpisodeConfig, EpisodeLog, Observation,
                     ScanConfig, StepRecord)
from .gridmap import (AgentPose, GeodesicField, GeometricMap, GridMap,
                      MapGenParams, RangeScan, action_distance,
                      action_distance_field, generate_map, geodesic_field,
                      min_action_path, parse_map, ray_scan, serialize_map,
                      shortest_cell_path, update_geometric_map)
from .metrics import (EpisodeScores, InterceptResult, ScoreReport, aggregate,
                      intercept_oracle, score_episode)
from .scenario import (EpisodeAudioPlan, ScenarioConfig, StepAudioEvents,
                       apply_spec_augment, plan_episode, plan_step)
from .soundbank import (SoundAsset, SoundBank, load_wav, save_wav,
                        step_slice, synthesize_bank)

__version__ = "0.1.0"
