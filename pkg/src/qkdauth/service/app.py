"""HTTP face of the simulator.

Every endpoint is a pure function of its request body: experiments are
seeded and CPU-bound, so the service is stateless and two identical requests
return identical reports.  The CLI drives this app in-process by default.
"""
from __future__ import annotations

from fastapi import FastAPI

from .. import __version__
from ..experiments import (
    AttackDemoReport,
    AttackDemoRequest,
    BellTestReport,
    BellTestRequest,
    ExperimentBatch,
    ExperimentConfig,
    run_attack_demo,
    run_bell_test,
    run_experiment,
)
from .models import HealthResponse


def create_app() -> FastAPI:
    app = FastAPI(
        title="qkdauth",
        version=__version__,
        description=(
            "Deterministic EPR-based QKD simulator with mutual identity "
            "verification and attack experiments"
        ),
    )

    @app.get("/healthz", response_model=HealthResponse)
    def healthz():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/run", response_model=ExperimentBatch)
    def run(config: ExperimentConfig):
        return run_experiment(config)

    @app.post("/bell-test", response_model=BellTestReport)
    def bell_test(request: BellTestRequest):
        return run_bell_test(request)

    @app.post("/attack-demo", response_model=AttackDemoReport)
    def attack_demo(request: AttackDemoRequest):
        return run_attack_demo(request)

    return app


app = create_app()
