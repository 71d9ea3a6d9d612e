"""Single-scenario endpoints router."""
from fastapi import APIRouter, HTTPException

from app import schemas
from app.exceptions import NavigationError
from app.routers.dependencies import get_services
from app.services.campaign import run_scenario

router = APIRouter(prefix="/api/scenarios", tags=["Scenarios"])


@router.get("/default", response_model=schemas.ScenarioConfig)
def get_default_scenario():
    """Scenario configuration used when a request does not supply one."""
    return get_services().default_config


@router.get("/presets")
def list_presets():
    return {"presets": sorted(schemas.PRESETS)}


@router.post("/run", response_model=schemas.RunResponse)
def run_single(request: schemas.ScenarioRequest):
    """
    Simulate one run and return the final estimate of every selected estimator.

    - **config**: Full scenario configuration
    - **run_index**: Run number; the run uses seed ``config.seed + run_index``
    """
    try:
        report = run_scenario(request.config, request.run_index)
    except NavigationError as e:
        raise HTTPException(status_code=422, detail=str(e))

    estimates = []
    for name, track in report.tracks.items():
        final = track.final
        if final is None:
            continue
        estimates.append(schemas.FinalEstimate(
            estimator=name,
            t=final["t"],
            attitude_error_deg=[final["err_yaw_deg"], final["err_pitch_deg"], final["err_roll_deg"]],
            accel_bias_ug=[final[f"ba_{axis}"] for axis in "xyz"],
            accel_bias_error_ug=[final[f"ba_err_{axis}"] for axis in "xyz"],
            gyro_bias_deg_h=[final[f"bg_{axis}"] for axis in "xyz"],
            lever_arm_error_mm=[final[f"lever_err_{axis}_mm"] for axis in "xyz"],
            objective=None if name == "ekf" else final["objective"],
            objective_at_truth=None if name == "ekf" else final["objective_at_truth"],
            iterations=int(final["iters"]),
        ))

    return schemas.RunResponse(run_index=report.run_index, seed=report.seed, estimates=estimates,
                               earth_rate_ratio=report.earth_rate_ratio, wall_time_s=report.wall_time_s)
