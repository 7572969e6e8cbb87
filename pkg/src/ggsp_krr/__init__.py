"""Kernel ridge reconstruction of signals on (vertex, time) pairs."""
from .baselines import (
    GtrssProblem,
    gtrss_as_krr_check,
    isolated_krr,
    online_gtrss,
    online_gtrss_step,
    solve_gtrss,
)
from .errors import DataError, GgspError, NumericalError
from .graph import Graph, hop_table, load_graph, path_graph, read_edge_list, ring_graph
from .harness import (
    ExperimentConfig,
    MetricReport,
    ingest_samples,
    relative_error,
    run_synthetic,
    write_samples,
)
from .kernels import (
    Bandlimited,
    GaussianRbf,
    GraphKernel,
    GtrssDifference,
    LaplacianRbf,
    ProductKernel,
    build_graph_kernel_polynomial,
    build_graph_kernel_quadratic,
    build_graph_kernel_spectral,
    gtrss_prior_correlation,
    identity_graph_kernel,
    kernel_from_spec,
)
from .online_rff import RffPredictor, build_feature_map, sgd_step
from .reconstruct import (
    KrrModel,
    PosteriorQuery,
    SampleSet,
    fit_krr,
    posterior_mean,
    posterior_variance,
    predict,
    predict_localized,
)
from .variance import (
    draw_exclusive_plan,
    empirical_posterior_variance,
    integrated_limit_variance,
    l_value,
    limit_variance_discretized,
    make_grid,
    sample_gp,
    var_bound,
)

__version__ = "0.1.0"
