"""Conformal prediction sets with abstention under test-distribution shift.

Three methods share one split-conformal core: bcops (class-vs-test
scorers learned from the unlabeled test data), dls (per-class density
level sets) and irs (in-sample probability ratios). The package also
estimates the test mixture proportions under an unseen outlier component
and derives outlier-abstention-rate / false-labeling-rate estimates from
them.
"""

__version__ = "0.1.0"
