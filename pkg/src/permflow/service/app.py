"""FastAPI service wrapping the inference library.

Quick operations (wavelet transforms, single Darcy solves) run
synchronously; full SMC inference and benchmark runs are submitted as
jobs and polled at ``/jobs/{id}``.  Errors from the numerical kernels
map to 400/422 responses with a machine-readable body.
"""

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

import numpy as np

from .. import __version__
from ..benchmarks import BENCHMARK_IDS, run_benchmark
from ..config import resolve_config
from ..darcy import SensorObservation, SolverSettings, observe, vcycle_solve, DarcyProblem
from ..errors import PermflowError
from ..fields import GridField2D
from ..lifting import LiftingConfig
from ..model import ForwardModel
from ..quadtree import forward_transform_2d, inverse_transform_2d, tree_from_json, tree_to_json
from ..smc import run_adaptive
from . import schemas
from .jobs import JobRegistry


def _field_payload(field):
    return schemas.FieldPayload(
        values=field.values.tolist(), domain=field.domain, endpoint=field.endpoint
    )


def _grid_field(payload):
    return GridField2D(
        values=np.asarray(payload.values, dtype=float),
        domain=tuple(payload.domain),
        endpoint=payload.endpoint,
    )


def _scale_summary(record):
    def fld(arr):
        if arr is None:
            return None
        return schemas.FieldPayload(values=np.asarray(arr).tolist(),
                                    domain=(0, 1, 0, 1), endpoint=False)

    return schemas.ScaleSummary(
        scale=record.scale,
        log_z=record.log_z,
        log_bf=record.log_bf,
        basis_count=record.basis_count,
        resample_steps=list(record.resample_steps),
        ess_trace=[float(v) for v in record.ess_trace],
        acceptance_trace=[float(v) for v in record.acceptance_trace],
        sigma_trace=[float(v) for v in record.sigma_trace],
        mean_field=fld(record.mean_field),
        q05_field=fld(record.q05_field),
        q95_field=fld(record.q95_field),
    )


def _run_inference(cfg, observation):
    hp = cfg.hyperparams()
    forward = ForwardModel(
        lifting=cfg.lifting(),
        solver=cfg.solver_settings(),
        sensor_grid=observation.grid_size,
    )
    records, selected = run_adaptive(
        cfg["smc.max_scale"], observation, forward, hp, cfg.smc_settings(),
        field_fn=forward.cropped_field,
    )
    return records, selected


def create_app():
    app = FastAPI(title="permflow", version=__version__)
    app.state.jobs = JobRegistry()

    @app.exception_handler(PermflowError)
    async def _domain_error(request, exc):
        return JSONResponse(
            status_code=400,
            content=schemas.ErrorBody(error=str(exc), kind=type(exc).__name__).model_dump(),
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/transform/forward", response_model=schemas.TreePayload)
    def transform_forward(req: schemas.TransformForwardRequest):
        cfg = LiftingConfig(half_width=req.half_width, boundary=req.boundary)
        field = _grid_field(req.field)
        levels = req.levels
        if levels is None:
            levels = int(np.log2(field.values.shape[0])) - 1
        tree = forward_transform_2d(field, levels, cfg)
        return schemas.TreePayload(**tree_to_json(tree, cfg))

    @app.post("/transform/inverse", response_model=schemas.FieldPayload)
    def transform_inverse(req: schemas.TransformInverseRequest):
        cfg = LiftingConfig(half_width=req.half_width, boundary=req.boundary)
        tree = tree_from_json(req.tree.model_dump())
        field = inverse_transform_2d(tree, cfg, target_level=req.target_level,
                                     domain=tuple(req.domain))
        return _field_payload(field)

    @app.post("/solve", response_model=schemas.SolveResponse)
    def solve(req: schemas.SolveRequest):
        settings = SolverSettings(
            finest_level=req.finest_level,
            residual_tolerance=req.residual_tolerance,
            refinement_threshold=req.refinement_threshold,
            max_vcycles=req.max_vcycles,
            smoother_sweeps=req.smoother_sweeps,
        )
        problem = DarcyProblem(log_permeability=_grid_field(req.log_permeability))
        result = vcycle_solve(problem, settings)
        readings = None
        if req.sensor_grid:
            readings = observe(result.pressure, req.sensor_grid).tolist()
        return schemas.SolveResponse(
            pressure=_field_payload(result.pressure),
            residual=result.residual,
            cycles=result.cycles,
            adapt_rounds=result.adapt_rounds,
            active_fraction=result.active_fraction,
            readings=readings,
        )

    @app.post("/jobs/infer", response_model=schemas.JobInfo)
    def submit_infer(req: schemas.InferRequest):
        cfg = resolve_config(req.config)
        obs = SensorObservation(
            grid_size=req.observations.grid_size,
            readings=np.asarray(req.observations.readings, dtype=float),
            noise_fraction=req.observations.noise_fraction,
            noise_sigma=req.observations.noise_sigma,
            seed=req.observations.seed,
        )

        def work():
            records, selected = _run_inference(cfg, obs)
            return schemas.InferResult(
                selected_scale=selected,
                records=[_scale_summary(r) for r in records],
                manifest=cfg.to_manifest(command="infer"),
            ).model_dump()

        return app.state.jobs.submit("infer", work).info()

    @app.post("/jobs/benchmark", response_model=schemas.JobInfo)
    def submit_benchmark(req: schemas.BenchmarkRequest):
        if req.benchmark not in BENCHMARK_IDS:
            raise HTTPException(status_code=422,
                                detail=f"unknown benchmark {req.benchmark!r}")
        cfg = resolve_config(req.config)

        def work():
            report = run_benchmark(
                req.benchmark,
                cfg.hyperparams(),
                cfg.smc_settings(),
                cfg.solver_settings(),
                cfg.lifting(),
                sensor_grid=cfg["observation.sensor_grid"],
                noise_fraction=cfg["observation.noise_fraction"],
            )
            obs = report.observation
            return schemas.BenchmarkResult(
                benchmark=report.benchmark,
                selected_scale=report.selected_scale,
                basis_counts=report.basis_counts,
                log_z=report.log_z,
                log_bf=report.log_bf,
                rmse_selected=report.rmse_selected,
                coverage_diagonal=report.coverage_diagonal,
                records=[_scale_summary(r) for r in report.records],
                truth=_field_payload(report.truth),
                observations=schemas.ObservationPayload(
                    grid_size=obs.grid_size,
                    readings=obs.readings.tolist(),
                    noise_fraction=obs.noise_fraction,
                    noise_sigma=obs.noise_sigma,
                    seed=obs.seed,
                ),
                manifest=cfg.to_manifest(command="benchmark", benchmark=req.benchmark),
            ).model_dump()

        return app.state.jobs.submit("benchmark", work).info()

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        job = app.state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        info = job.info()
        if job.state == "done":
            info["result"] = job.result
        return info

    return app


app = create_app()
