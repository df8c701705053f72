"""Pose-estimation networks with grouped channel and global spatial weighting, in numpy."""
from .network import ArchConfig, Network, arch_config, build_network, forward, named_parameters

__all__ = ["ArchConfig", "Network", "arch_config", "build_network", "forward", "named_parameters"]
