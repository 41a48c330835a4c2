"""Closed-loop desk-scale laboratory for LiDAR spoofing against scan matching.

Synthesizes range scans of simple worlds, injects shaped phantom returns the
way a range-gated spoofer would, runs them through a gated ICP odometry, and
scores attack and defense outcomes over seeded trials.
"""

__version__ = "0.1.0"

from .geometry import Pose, PolarBeam, beam_to_point, point_to_beam  # noqa: F401
from .worldsim import LidarSpec, RangeScan, World, builtin_world, raycast_scan  # noqa: F401
from .spoofer import AttackConfig, derive_cycle, fake_range, injection_distance, tamper_scan  # noqa: F401
from .odometry import IcpConfig, ScanMatchOdometry, VoxelMap, run_odometry  # noqa: F401
from .defense import DetectorConfig, DefenseState, defense_step, tune_weights  # noqa: F401
from .evaluation import TrialResult, ape, asr, pr_curve, precision_recall  # noqa: F401
from .scenario import Scenario, load_scenario, scenario_hash, validate_scenario  # noqa: F401
