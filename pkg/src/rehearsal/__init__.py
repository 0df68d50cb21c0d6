"""Rehearsal learning toolkit: entropy-based order learning, conditional flows and AUF decisions."""
from .graph import DirectedAcyclicGraph, Order, topological_order
from .olem import OLEM, learn_order, prune_to_dag
from .metrics import div, shd, sid
from .flows import ConditionalFlow, FlowStack, TrainConfig, build_joint_sampler
from .decide import OLEMRh, OptConfig, chebyshev_center, estimate_success, optimize_decision

__version__ = "0.1.0"

__all__ = [
    "DirectedAcyclicGraph", "Order", "topological_order",
    "OLEM", "learn_order", "prune_to_dag",
    "div", "shd", "sid",
    "ConditionalFlow", "FlowStack", "TrainConfig", "build_joint_sampler",
    "OLEMRh", "OptConfig", "chebyshev_center", "estimate_success", "optimize_decision",
]
