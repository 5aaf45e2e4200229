"""Distill a GraphSAGE teacher into a noise-robust, structure-aware MLP student."""

from .graph_data import Graph, Role, SplitAssignment, generate_sbm, load_graph, make_split
from .position_encoding import DeepWalk, PositionTable
from .student_distill import DistillConfig, NOSMOGClassifier
from .teacher_gnn import SAGETeacher

__all__ = [
    "DeepWalk", "DistillConfig", "Graph", "NOSMOGClassifier", "PositionTable", "Role",
    "SAGETeacher", "SplitAssignment", "generate_sbm", "load_graph", "make_split",
]
__version__ = "0.1.0"
