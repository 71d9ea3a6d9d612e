"""INS/GNSS joint parameter estimation - FastAPI application and command-line harness."""
import argparse
import json
import logging
import os
import sys
from contextlib import asynccontextmanager
from typing import List, Optional

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from pydantic import ValidationError

from app.database import init_db
from app.exceptions import NavigationError
from app.routers import campaigns_router, scenarios_router
from app.schemas import PRESETS, ScenarioConfig
from app.settings import get_settings

logger = logging.getLogger(__name__)


# ===== LIFESPAN EVENT =====
@asynccontextmanager
async def lifespan(app: FastAPI):
    """Initialize the campaign registry and services on startup."""
    init_db()
    from app.routers.dependencies import get_services
    get_services()
    print("✅ Estimation server started")
    yield
    print("Estimation server shutting down...")


app = FastAPI(
    title="INS/GNSS Joint Estimation API",
    description="""
    Simulation and estimation of INS/GNSS initial attitude, IMU biases and GNSS lever arm.

    ## Features
    - **Scenarios**: Simulate one run and compare RA-JAPE, BA-JAPE and the EKF baseline
    - **Campaigns**: Monte Carlo campaigns with CSV/JSON reports stored in a registry
    """,
    version="1.0.0",
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# ===== HEALTH & ROOT ENDPOINTS =====
@app.get("/", tags=["Health"])
def read_root():
    return {
        "status": "online",
        "message": "INS/GNSS Joint Estimation API",
        "version": "1.0.0",
        "documentation": {"swagger": "/docs", "redoc": "/redoc"},
        "endpoints": {
            "default_scenario": "/api/scenarios/default",
            "run": "/api/scenarios/run",
            "campaigns": "/api/campaigns",
        },
    }


@app.get("/health", tags=["Health"])
def health_check():
    return {"status": "healthy", "database": "connected", "services": "initialized"}


# ===== REGISTER ROUTERS =====
app.include_router(scenarios_router)
app.include_router(campaigns_router)


# ===== COMMAND LINE =====
def load_config(args: argparse.Namespace) -> ScenarioConfig:
    """Scenario from ``--config`` or ``--preset``, with command-line overrides applied."""
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            data = json.load(f)
        if args.preset:
            logger.warning("--preset is ignored when --config is given")
    elif args.preset:
        data = ScenarioConfig.preset(args.preset).model_dump()
    else:
        data = ScenarioConfig().model_dump()

    if args.seed is not None:
        data["seed"] = args.seed
    if args.estimators:
        data["estimators"] = ["ra-jape", "ba-jape", "ekf"] if args.estimators == ["all"] else args.estimators
    if getattr(args, "runs", None) is not None:
        data["runs"] = args.runs
    return ScenarioConfig.model_validate(data)


def cmd_simulate(args: argparse.Namespace) -> int:
    from app.services import simkit

    config = load_config(args)
    profile = config.motion_profile()
    spec = config.sensor_spec()
    seed = config.seed + args.run_index
    imu = simkit.synthesize_imu(profile, spec, seed, config.duration)
    gnss = simkit.synthesize_gnss(profile, spec, seed, config.duration)
    truth = simkit.truth_series(profile, [fix.t for fix in gnss])

    os.makedirs(args.out, exist_ok=True)
    for name, frame in (("truth", simkit.truth_frame(truth)), ("imu", simkit.imu_frame(imu)),
                        ("gnss", simkit.gnss_frame(gnss))):
        frame.to_csv(os.path.join(args.out, f"{name}.csv"), index=False, float_format="%.9f")
    print(f"📁 Streams for seed {seed} written to {args.out}")
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    from app.services.campaign import SERIES_COLUMNS, run_scenario

    config = load_config(args)
    report = run_scenario(config, args.run_index)
    os.makedirs(args.out, exist_ok=True)
    for name, track in report.tracks.items():
        track.frame().to_csv(os.path.join(args.out, f"run_{report.run_index:03d}_{name}.csv"),
                             index=False, columns=SERIES_COLUMNS, float_format="%.9g")
        if track.final is None:
            continue
        final = track.final
        print(f"✅ {name:8s} t={final['t']:.2f}s "
              f"att err [{final['err_yaw_deg']:.5f} {final['err_pitch_deg']:.5f} {final['err_roll_deg']:.5f}] deg, "
              f"lever err [{final['lever_err_x_mm']:.2f} {final['lever_err_y_mm']:.2f} "
              f"{final['lever_err_z_mm']:.2f}] mm")
    print(f"📁 Time series written to {args.out} ({report.wall_time_s:.1f} s)")
    return 0


def cmd_montecarlo(args: argparse.Namespace) -> int:
    from app.services.campaign import monte_carlo
    from app.services.reporting import emit_report, summary_table

    config = load_config(args)
    workers = args.workers or get_settings().workers
    campaign = monte_carlo(config, workers=workers)
    emit_report(campaign, args.out)
    print(summary_table(campaign.summary))
    print(f"📁 Report written to {args.out}")
    return 0


def cmd_crosscheck(args: argparse.Namespace) -> int:
    from app.services.campaign import crosscheck

    config = load_config(args)
    result = crosscheck(config, args.run_index, tolerance=args.tolerance)
    if result.passed:
        print(f"✅ RA-JAPE and BA-JAPE agree over {result.epochs} epochs (max difference {result.max_difference:.3e})")
        return 0
    print(f"❌ Trajectories differ by {result.max_difference:.3e} (tolerance {result.tolerance:.1e})")
    return 1


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    print(f"Starting INS/GNSS Joint Estimation API on http://{args.host}:{args.port}")
    print(f"API Documentation: http://{args.host}:{args.port}/docs")
    uvicorn.run("main:app", host=args.host, port=args.port, reload=args.reload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(prog="jape", description=__doc__)
    parser.add_argument("--print-default-config", action="store_true",
                        help="Print the default scenario as JSON and exit")
    parser.add_argument("--print-config-schema", action="store_true",
                        help="Print the JSON schema of the scenario file and exit")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Scenario JSON file")
    common.add_argument("--preset", choices=sorted(PRESETS), help="Named sensor regime")
    common.add_argument("--out", default=settings.output_dir, help="Output directory")
    common.add_argument("--seed", type=int, help="Seed of run 0")
    common.add_argument("--estimators", nargs="+", choices=["ra-jape", "ba-jape", "ekf", "all"])
    common.add_argument("--run-index", type=int, default=0)

    sub = parser.add_subparsers(dest="command")
    sub.add_parser("simulate", parents=[common], help="Write truth, IMU and GNSS streams as CSV")
    sub.add_parser("estimate", parents=[common], help="Run one scenario and write its time series")
    mc = sub.add_parser("montecarlo", parents=[common], help="Run a Monte Carlo campaign and write the report")
    mc.add_argument("--workers", type=int, help="Worker processes")
    mc.add_argument("--runs", type=int, help="Number of runs")
    cc = sub.add_parser("crosscheck", parents=[common], help="Compare RA-JAPE and BA-JAPE trajectories")
    cc.add_argument("--tolerance", type=float, default=1e-8)
    serve = sub.add_parser("serve", help="Start the HTTP API")
    serve.add_argument("--host", default="0.0.0.0")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--reload", action="store_true")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "montecarlo": cmd_montecarlo,
    "crosscheck": cmd_crosscheck,
    "serve": cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    settings = get_settings()
    logging.basicConfig(level=settings.log_level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.print_default_config:
        print(json.dumps(ScenarioConfig().model_dump(mode="json"), indent=2))
        return 0
    if args.print_config_schema:
        print(json.dumps(ScenarioConfig.model_json_schema(), indent=2))
        return 0
    if not args.command:
        parser.print_help()
        return 1

    try:
        return COMMANDS[args.command](args)
    except (NavigationError, ValidationError, OSError) as e:
        print(f"❌ {e}")
        return 1


# ===== MAIN ENTRY POINT =====
if __name__ == "__main__":
    sys.exit(main())
