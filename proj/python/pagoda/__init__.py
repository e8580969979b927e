"""Python surface of the pagoda pipeline: DDIM inversion, one-step
distillation helpers, progressive growing artifacts and the theory labs."""

import json as _json

from ._pagoda import (  # noqa: F401
    adaptive_lambda,
    analytic_gaussian_score,
    dataset_names,
    ddim_generate_analytic,
    ddim_invert_analytic,
    downsample,
    edm_times,
    guided_gaussian,
    hurwitz_check,
    load_tensor,
    marginal_params,
    optimality_gap,
    prior_sample,
    sample_dataset,
    save_tensor,
    simulate_altgd,
    sliced_wasserstein,
    slerp,
    w1_bound_check,
    w1_sorted,
    w2_bound_check,
)
from ._pagoda import run_command as _run_command_raw


def run_command(command, config=None, out_dir=""):
    """Run a pipeline command (dsm-train, build-pairs, distill, grow, sample,
    eval, edit, interpolate, cfg-train, lab) and return its summary dict."""
    payload = _json.dumps(config or {})
    return _json.loads(_run_command_raw(command, payload, out_dir))


__all__ = [name for name in dir() if not name.startswith("_")]
