"""preflab: a desk-scale laboratory for preference-based reward modeling.

Pipeline: synthetic trajectory generation -> preference labeling (scripted
oracle or human UI) -> Bradley-Terry reward-model training -> sliding-window
reward relabeling -> offline tabular policy learning -> evaluation.
"""

__version__ = "0.1.0"
