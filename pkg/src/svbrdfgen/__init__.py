"""svbrdfgen: generative diffusion toolkit for SVBRDF synthesis and capture."""

from .capture import (
    EvalReport,
    Replicate,
    ReplicateSet,
    contact_sheet,
    evaluate_relighting,
    generate_replicates,
    proxy_perceptual_error,
    select_by_render_error,
)
from .conditions import CaptureLighting, condition_stack, sample_lighting
from .denoiser import (
    DenoiserModel,
    NetConfig,
    expand_input_head,
    init_backbone,
    load_weights,
    save_weights,
)
from .diffusion import (
    NoiseSchedule,
    SamplerConfig,
    build_schedule,
    expectations,
    kdiffusion_loss,
    make_training_pair,
    sample_eulera,
)
from .forge import (
    DatasetManifest,
    ForgeConfig,
    RandomFeatureNet,
    assign_specular,
    build_manifest,
    mix_materials,
    procedural_roughness,
    random_crops,
    realize_record,
)
from .geometry import height_to_normals, normals_to_height
from .material import (
    ALPHA_MIN,
    MaterialError,
    MaterialMaps,
    decode_material,
    encode_material,
    load_material,
    random_material,
    save_material,
)
from .shading import (
    CameraModel,
    EnvironmentMap,
    PointLight,
    eval_brdf,
    procedural_env,
    render_colocated,
    render_env,
    render_point,
    sample_camera_distance,
    synth_flash_noflash,
)
from .training import (
    TrainConfig,
    TrainResult,
    finetune_conditional,
    train_backbone,
    train_conditional_scratch,
)

__version__ = "0.1.0"
