"""Frechet means and sticky limit theorems on open books."""

from .frechet import (
    SampleSet,
    barycenter,
    barycenter_oracle,
    folded_average,
    frechet_objective,
    gamma_gradient_check,
    projected_mean,
)
from .geometry import (
    BookPoint,
    BookShape,
    convex_project,
    distance,
    fold,
    project_spine,
    reflect,
    scale,
    translate,
    unfold,
)
from .measures import (
    BookMeasure,
    Classification,
    Verdict,
    center,
    classify,
    costal_covariance,
    first_moment,
    leaf_mean_v,
    nonsticky_covariance,
    population_mean,
    spinal_covariance,
)

__version__ = "0.1.0"
