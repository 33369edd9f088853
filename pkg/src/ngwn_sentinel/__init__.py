"""Trust-aware intrusion detection and prevention for edge-IoT networks."""

__version__ = "0.1.0"
