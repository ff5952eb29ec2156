"""Stream-based active learning with reinforcement-learned labeling policies.

Modules: :mod:`~streamal.data` (datasets and splits), :mod:`~streamal.model`
(the classifier), :mod:`~streamal.agent` (labeling policy and its updates),
:mod:`~streamal.strategies` (budget gate and the four strategies),
:mod:`~streamal.harness` (multi-trial experiments and reports) and
:mod:`~streamal.cli`.
"""

__version__ = "0.1.0"
