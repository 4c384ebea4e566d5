"""Hyperfine structure, ZEFOZ search, spectrum maps and echo analysis for Kramers rare-earth ions."""

__version__ = "0.1.0"

from .spin import (  # noqa: E402
    MU_B,
    MU_N,
    AffineModel,
    SpinHamiltonian,
    SpinParams,
    angular_momentum_operators,
    build_hamiltonian,
    field_derivative,
    load_params,
    save_params,
)
from .levels import LevelSet, degeneracy_groups, solve_levels, sweep_levels, track_levels  # noqa: E402
from .transitions import (  # noqa: E402
    Transition,
    freq_curvature,
    freq_gradient,
    strength_from_pi_pulse,
    transition_strength,
    transition_table,
)
from .zefoz import ZefozPoint, characterize, find_zefoz, objective  # noqa: E402
from .spectrum import (  # noqa: E402
    LineshapeSpec,
    SpectrumGrid,
    compare_maps,
    export_map,
    ingest_measured_map,
    synthesize_map,
)
from .dynamics import (  # noqa: E402
    EchoTrace,
    EnsembleSpec,
    PulseSequence,
    decay_curve,
    echo_envelope,
    simulate_sequence,
)
from .fitting import (  # noqa: E402
    DecayFit,
    HamFitResult,
    IdentifiabilityWarning,
    fit_hamiltonian_params,
    fit_lifetime,
    fit_t2_cpmg,
    fit_t2_two_pulse,
)
