"""Two-stage GRPO on a stack-machine program-synthesis task.

Modules: ``lang`` (the DSL and interpreter), ``corpus`` (oracle-labelled
problems), ``judge`` (rewards), ``policy`` (linear-softmax generator),
``warmstart`` (supervised curation), ``grpo`` (the trainer), ``curriculum``
(stage orchestration), ``metrics`` (evaluation and reports) and ``cli``.
"""

__version__ = "0.1.0"
