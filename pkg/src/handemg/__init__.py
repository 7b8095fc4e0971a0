"""Hand kinematics, EMG signal processing, and pose-benchmark tooling."""

__version__ = "0.1.0"

FORMAT_VERSION = "EGL1"
