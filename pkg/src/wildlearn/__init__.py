"""Wild-data benchmark toolkit: mixture generation, gradient-scored selection,
oracle/human annotation, joint classifier + detector training, and evaluation."""

__version__ = "0.1.0"

from .data import (BOTTOM, UNLABELED, MEMBER_ID, MEMBER_COV, MEMBER_SEM,
                   MEMBER_UNKNOWN, CovariateTransform, Dataset, SyntheticSpec,
                   WildMixtureSpec, generate_synthetic, mix_wild,
                   read_dataset, write_dataset)
from .errors import (FormatError, MembershipAccessError, StageError,
                     ValidationError, WildlearnError)
from .nnet import Architecture, forward, predict_label
from .optimize import TrainConfig, train_erm, train_joint
from .gradscore import (GradMatrix, ScoreTable, baseline_score, badge_select,
                        gradient_scores, reference_gradient, top_singular_vector,
                        wild_gradient_matrix)
from .selection import (SelectionResult, id_boundary_threshold, select_mixed,
                        select_near_boundary, select_top_k)
from .annotate import AnnotationSession, SessionStore, oracle_annotate
from .metrics import EvalReport, accuracy, composition, detector_eval
from .theorybound import BoundReport, bound_report, gradient_discrepancy
from .config import ExperimentConfig, default_config, load_config, parse_experiment_config
from .runner import run_experiment, run_sweep
