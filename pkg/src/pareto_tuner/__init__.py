"""Multi-objective parameter/prompt tuner for text-to-image backends.

Searches a mixed genome (sampler settings plus prompt-token subsets) with
NSGA-II to jointly minimize inference time and maximize image quality,
records every evaluation in replayable run archives, and ships the
analytics used to compare approaches (Pareto fronts, 2-D hypervolume,
random-forest feature importance).
"""

__version__ = "0.1.0"
