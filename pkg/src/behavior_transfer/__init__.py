"""Behavior transfer: exploring with frozen pre-trained policies.

Modules: ``envs`` (finite MDPs and a value-iteration oracle), ``intrinsic``
(episodic novelty, RND and their combination), ``learner`` (Q-functions and
multi-step backups), ``explore`` (action selection, flights, extra action),
``replay`` (prioritized sequence replay) and ``harness`` (runs, metrics,
checkpoints and the command line).
"""

__version__ = "0.1.0"
