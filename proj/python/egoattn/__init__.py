"""Egocentric activity recognition: CAM spatial attention, convLSTM, two-stream flow."""

from ._egoattn import (
    ConfigError,
    DimensionError,
    DivergenceError,
    IoError,
    apply_spatial_attention,
    build_flow_stack,
    compute_cam,
    config_keys,
    conv2d,
    convlstm_step,
    cross_modality_init,
    fuse_average,
    generate_clip,
    global_avg_pool,
    resolve_config,
    run_suite,
    spatial_softmax,
    tvl1_flow,
    warp_compensate,
    winning_class,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "DivergenceError",
    "IoError",
    "apply_spatial_attention",
    "build_flow_stack",
    "compute_cam",
    "config_keys",
    "conv2d",
    "convlstm_step",
    "cross_modality_init",
    "fuse_average",
    "generate_clip",
    "global_avg_pool",
    "resolve_config",
    "run_suite",
    "spatial_softmax",
    "tvl1_flow",
    "warp_compensate",
    "winning_class",
]
