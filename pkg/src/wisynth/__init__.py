"""Label models for weak indirect supervision over typed label graphs."""
from .graph import (ABSTAIN, GraphError, IlfSpec, Label, LabelGraph, Relation, Role,
                    check_consistency, check_distinguishability, check_informativeness,
                    from_dag)
from .model import (Assignment, Dependency, FactorModel, Family, UNKNOWN, build_plrm,
                    build_wslg, feature_vector)
from .inference import (BudgetExceededError, PosteriorLabels, exact_posterior,
                        gibbs_sample, posterior_labels)

__version__ = "0.1.0"
