"""Matrix product state ensembles that classify and sample exactly.

One chain of site tensors per class plays both roles: its squared
output on an embedded input is an unnormalized class score, and the
same squared output, normalized over the support, is a density the
package can sample from exactly (no accept/reject, no chains).  A
cross-entropy phase fits the classifier; an optional adversarial phase
sharpens the generator while a floor on validation accuracy protects
the classifier.
"""

__version__ = "0.1.0"

from .datasets import (
    Dataset,
    from_support,
    gen_moons,
    gen_spiral,
    load_dataset_csv,
    load_iris,
    save_dataset_csv,
    stratified_split,
    to_support,
)
from .embeddings import Embedding, GramMatrix, embed, gram_matrix, make_embedding
from .errors import (
    ArgumentError,
    CapabilityError,
    DegenerateContractionError,
    DegenerateDensityError,
    DimensionError,
    DomainError,
    ModelFormatError,
    MpsError,
    NotSpdError,
    NumericalError,
    TrainingFailedError,
)
from .metrics import (
    MetricsReport,
    accuracy,
    fid_like,
    outlier_rate,
    perturbed_accuracy,
)
from .mps import (
    MpsEnsemble,
    ScaledScalar,
    classify,
    init_ensemble,
    joint_density,
    load_model,
    mps_norm_sq,
    predict,
    predict_proba,
    save_model,
    site_matrices,
)
from .rng import RngStream
from .sampling import (
    CdfTable,
    ReducedDensityMatrix,
    build_cdf,
    interpolate_latent,
    inverse_cdf,
    pdf_eval,
    reduced_density_matrix,
    sample,
)
from .training import (
    Discriminator,
    GanConfig,
    TrainConfig,
    cross_entropy_loss,
    grad_loss,
    train_classifier,
    train_gan,
)
