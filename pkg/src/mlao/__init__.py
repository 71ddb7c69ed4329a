"""Machine-learned sensorless adaptive optics, simulated end to end.

The package covers the full loop: Zernike aberrations composed into pupil
phase, Fourier-optics PSF synthesis for widefield and multiphoton
modalities, synthetic specimens imaged with realistic noise, pseudo-PSF
pre-processing, a compact from-scratch CNN that estimates the correction
from a handful of deliberately biased images, conventional modal baselines
for comparison, and a virtual microscope to close the loop on.
"""

from .analysis import layer_response_profile, layer_weight_rms, spectral_threshold
from .baselines import BaselineResult, parabolic_peak, run_2n_plus_1, run_3n
from .control import (
    ConventionalEstimator,
    MicroscopeHandle,
    MlaoEstimator,
    OracleEstimator,
    Report,
    Trajectory,
    VirtualMicroscope,
    compare,
    run_mlao,
)
from .imaging import (
    NoiseConfig,
    add_noise,
    augment,
    form_image,
    read_pgm,
    rotate_frame,
    synth_specimen,
    write_pgm16,
)
from .metrics import (
    MetricConfig,
    band_mask,
    metric_for_modality,
    metric_fourier,
    metric_intensity,
    metric_sharpness,
)
from .network import (
    FormatError,
    Hyper,
    NetworkModel,
    TrainState,
    adamw_step,
    count_parameters,
    forward,
    forward_batch,
    init_model,
    init_train_state,
    load_model,
    loss_and_grad,
    parameter_count,
    save_model,
)
from .optics import DegenerateInputError, Psf, Pupil, fwhm, make_pupil, psf
from .pseudopsf import (
    CROP_SIZE,
    DEFAULT_EPSILON,
    PseudoStack,
    build_input_stack,
    compute_pseudo_psf,
    crop_center,
)
from .schemes import (
    DEFAULT_CORRECTED_MODES,
    SCHEME_TAGS,
    CorrectionScheme,
    make_scheme,
)
from .training import (
    Dataset,
    DatasetSpec,
    EvalResult,
    TrainLog,
    evaluate,
    generate_dataset,
    generate_sample,
    load_dataset,
    sampling_sweep,
    save_dataset,
    train,
)
from .zernike import (
    PhaseMap,
    ZernikeVector,
    compose_phase,
    evaluate_mode,
    noll_to_nm,
    rms,
    sample_aberration,
)

__version__ = "0.1.0"
