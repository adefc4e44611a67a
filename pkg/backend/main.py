import logging
import math
from contextlib import asynccontextmanager
from typing import Literal, Optional

from fastapi import Depends, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, ConfigDict, ValidationError
from sqlalchemy import select
from sqlalchemy.orm import Session

from bench import SolverSpec, run_problem
from config import configure_logging, get_settings
from database import RunRecord, get_db, init_db, record_run, serialize_run
from errors import PreconditionError, ProblemNotFoundError, VIBenchError
from registry import PROBLEMS, get_problem, problem_names
from tracing import flush, get_client

logger = logging.getLogger(__name__)


class SolveRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: str
    solver: SolverSpec = SolverSpec()
    include_trace: bool = True


class SolveResponse(BaseModel):
    run_id: Optional[int] = None
    status: Literal["solved_exact", "tol_reached", "max_iter", "diverged"]
    report: dict
    constants: dict
    trace: list[dict] = []


def _json_row(record: dict) -> dict:
    return {k: None if isinstance(v, float) and math.isnan(v) else v for k, v in record.items()}


@asynccontextmanager
async def lifespan(app: FastAPI):
    # Startup
    configure_logging()
    init_db()
    if get_client() is None:
        logger.warning("Langfuse credentials not configured")
    yield
    # Shutdown
    flush()


app = FastAPI(
    title="Variational Inequality Benchmark API",
    description="Forward-backward-forward solvers and baselines for pseudo-monotone variational inequalities",
    version="1.0.0",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/")
async def root():
    return {
        "message": "Variational Inequality Benchmark API",
        "version": "1.0.0",
        "endpoints": {
            "/health": "GET - Health check",
            "/problems": "GET - List built-in problems",
            "/problems/{name}": "GET - Problem constants (computed on first access)",
            "/solve": "POST - Run a solver on a problem",
            "/runs": "GET - Run history",
            "/runs/{id}": "GET - Run by ID, DELETE - remove it",
        },
    }


@app.get("/health")
async def health_check():
    settings = get_settings()
    return {
        "status": "healthy",
        "problems": problem_names(),
        "database_url": settings.database_url,
        "langfuse_configured": settings.langfuse_configured,
    }


@app.get("/problems")
def list_problems():
    return [
        {"name": name, "dim": len(PROBLEMS[name].x0), "description": PROBLEMS[name].description}
        for name in problem_names()
    ]


@app.get("/problems/{name}")
def problem_detail(name: str):
    try:
        return get_problem(name).summary()
    except ProblemNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))


@app.post("/solve", response_model=SolveResponse)
def solve_problem(request: SolveRequest, db: Session = Depends(get_db)):
    try:
        problem = get_problem(request.problem)
    except ProblemNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
    try:
        outcome = run_problem(request.solver, problem)
    except (PreconditionError, ValidationError, ValueError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    except VIBenchError as e:
        raise HTTPException(status_code=500, detail=f"{type(e).__name__}: {e}")

    payload = outcome.payload()
    if outcome.status == "diverged":
        raise HTTPException(status_code=409, detail={"error": outcome.error, "report": payload["report"]})

    run_id = None
    try:
        run_id = record_run(db, problem.name, request.solver.method, outcome.status, outcome.report.iterations, payload).id
    except Exception as db_error:
        db.rollback()
        logger.warning("Failed to save run to database: %s", db_error)

    return SolveResponse(
        run_id=run_id,
        status=outcome.status,
        report=payload["report"],
        constants=payload["constants"],
        trace=[_json_row(row.as_record()) for row in outcome.trace] if request.include_trace else [],
    )


@app.get("/runs")
def list_runs(problem: Optional[str] = None, db: Session = Depends(get_db)):
    query = select(RunRecord).order_by(RunRecord.id)
    if problem:
        query = query.where(RunRecord.problem == problem)
    return [serialize_run(r) for r in db.execute(query).scalars().all()]


@app.get("/runs/{run_id}")
def get_run(run_id: int, db: Session = Depends(get_db)):
    record = db.get(RunRecord, run_id)
    if not record:
        raise HTTPException(status_code=404, detail="Run not found")
    return serialize_run(record)


@app.delete("/runs/{run_id}")
def delete_run(run_id: int, db: Session = Depends(get_db)):
    record = db.get(RunRecord, run_id)
    if not record:
        raise HTTPException(status_code=404, detail="Run not found")
    db.delete(record)
    db.commit()
    return {"message": "Run deleted successfully"}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
