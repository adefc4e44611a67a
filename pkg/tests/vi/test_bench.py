"""
Tests for run specifications, artifacts and the benchmark commands
"""

import io
import json
import math
import sys
from pathlib import Path

import pytest
from pydantic import ValidationError
from sqlalchemy import select

sys.path.insert(0, str(Path(__file__).parent.parent.parent / 'backend'))

import artifacts
import bench
from bench import (
    EXIT_DIVERGED,
    EXIT_INVALID,
    EXIT_MAX_ITER,
    EXIT_OK,
    FlowRequest,
    RunSpec,
    SolverSpec,
    cmd_certify,
    cmd_compare,
    cmd_flow,
    cmd_list_problems,
    cmd_solve,
    cmd_sweep_rho,
    guarded,
    parse_method,
    parse_rho_list,
    resolve_lambda,
    run_cells,
    to_solver_config,
)
from database import RunRecord, session_factory
from diagnostics import TraceRow
from errors import DivergenceError, PreconditionError
from geometry import Box
from operators import FractionalGradient
from solvers import AdaptiveStep, DistToRefBelow, FixedStep, ResidualBelow, SequenceRho, SolverConfig, solve

from conftest import fast_problem

TRACE_HEADER = "iter,lambda,rho,residual,dist_ref,step_norm,f_evals,proj_calls,elapsed_ns"


def sample_row(k=1, dist=0.5):
    return TraceRow(
        iter=k, lambda_=0.1, rho=1.3, residual=0.01 / 3.0, dist_ref=dist, step_norm=0.01 / 3.0,
        f_evals=2 * k, proj_calls=k, elapsed_ns=12345,
    )


class TestArtifacts:
    """Test the on-disk formats"""

    def test_trace_header(self, tmp_path):
        """Test the exact trace CSV header"""
        path = artifacts.write_trace(tmp_path / "t_trace.csv", [sample_row()])
        assert path.read_text().splitlines()[0] == TRACE_HEADER

    def test_trace_round_trip(self, tmp_path):
        """Test that reading a written trace reproduces every value"""
        rows = [sample_row(1, 0.5), sample_row(2, math.nan)]
        back = artifacts.read_trace(artifacts.write_trace(tmp_path / "t_trace.csv", rows))
        assert len(back) == 2
        assert all(a.same_values(b) for a, b in zip(rows, back))

    def test_wrong_header_rejected(self, tmp_path):
        """Test that a CSV with other columns is not read as a trace"""
        path = artifacts.write_table(tmp_path / "other.csv", ("a", "b"), [(1, 2)])
        with pytest.raises(ValueError):
            artifacts.read_trace(path)

    def test_json_refuses_nan(self, tmp_path):
        """Test that NaN never reaches a report file"""
        with pytest.raises(ValueError):
            artifacts.write_json(tmp_path / "r.json", {"x": math.nan})

    def test_artifact_paths(self):
        """Test the derived file names"""
        paths = artifacts.artifact_paths("runs/plane3_fbf")
        assert paths["trace"] == Path("runs/plane3_fbf_trace.csv")
        assert paths["report"] == Path("runs/plane3_fbf_report.json")
        assert paths["summary"] == Path("runs/plane3_fbf_summary.csv")


class TestRunSpec:
    """Test run specification parsing"""

    def test_lambda_alias(self):
        """Test that the solver stepsize is read from 'lambda'"""
        spec = RunSpec.model_validate({"problem": "plane3", "solver": {"lambda": "0.9/L"}})
        assert spec.solver.lam == "0.9/L"

    def test_defaults(self):
        """Test the default solver section"""
        solver = RunSpec(problem="plane3").solver
        assert solver.method == "fbf"
        assert solver.lam == "0.5/L"
        assert solver.stop == "dist_ref"
        assert solver.tol == 1e-6

    @pytest.mark.parametrize(
        "data",
        [
            {"problem": "plane3", "colour": "red"},
            {"problem": "plane4"},
            {"problem": "plane3", "solver": {"lambda": "half"}},
            {"problem": "plane3", "solver": {"mu": 1.0}},
            {"problem": "plane3", "solver": {"method": "newton"}},
        ],
    )
    def test_invalid_specs(self, data):
        """Test that malformed specifications are rejected"""
        with pytest.raises(ValidationError):
            RunSpec.model_validate(data)

    def test_load_runspec(self, tmp_path):
        """Test loading a specification file"""
        path = tmp_path / "spec.json"
        path.write_text(json.dumps({"problem": "fractional5", "solver": {"lambda": 0.005, "rho": [0.5, 1.0]}}))
        spec = bench.load_runspec(path)
        assert spec.solver.lam == 0.005
        assert spec.solver.rho == [0.5, 1.0]


class TestLambdaAndParsing:
    """Test stepsize resolution and command-line list parsing"""

    def test_resolve_lambda(self):
        """Test absolute and relative stepsizes"""
        assert resolve_lambda("0.5/L", 2.0) == 0.25
        assert resolve_lambda(" 1e-1 / L ", 1.0) == pytest.approx(0.1)
        assert resolve_lambda("0.3", None) == 0.3
        assert resolve_lambda(0.2, None) == 0.2

    def test_resolve_lambda_errors(self):
        """Test that a relative stepsize needs L and that lambda must be positive"""
        with pytest.raises(PreconditionError):
            resolve_lambda("0.5/L", None)
        with pytest.raises(PreconditionError):
            resolve_lambda(0.0, 1.0)

    def test_rho_range(self):
        """Test the inclusive start:stop:step form"""
        assert parse_rho_list("0.5:1.3:0.1") == [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3]
        assert parse_rho_list("0.5, 0.7") == [0.5, 0.7]

    @pytest.mark.parametrize("text", ["1.3:0.5:0.1", "0.5:1.0", "0.5:1.0:0"])
    def test_bad_rho_range(self, text):
        """Test rejected ranges"""
        with pytest.raises(ValueError):
            parse_rho_list(text)

    def test_parse_method(self):
        """Test method labels with and without a stepsize"""
        base = SolverSpec(rho=1.3)
        label, spec = parse_method("fbf-adaptive@1", base)
        assert label == "fbf-adaptive@1"
        assert (spec.method, spec.lambda_mode, spec.lam, spec.rho) == ("fbf", "adaptive", "1", 1.3)
        _, spec = parse_method("subgradient-extragradient", base)
        assert (spec.method, spec.lambda_mode, spec.rho) == ("subgradient_extragradient", "fixed", 1.0)
        with pytest.raises(ValueError):
            parse_method("newton", base)

    def test_run_cells_keeps_order(self):
        """Test that parallel mapping preserves input order"""
        assert run_cells(lambda v: v * v, [3, 1, 2], workers=3) == [9, 1, 4]


class TestSolverConfigConversion:
    """Test conversion of a solver section to a solver configuration"""

    def test_adaptive_sequence_and_stop(self):
        """Test the adaptive mode, a rho sequence and the dist_ref stop"""
        problem = fast_problem("fractional5")
        config = to_solver_config(SolverSpec(lam="1", lambda_mode="adaptive", mu=0.5, rho=[0.5, 1.0]), problem)
        assert config.lambda_mode == AdaptiveStep(lambda0=1.0, mu=0.5)
        assert config.rho_schedule == SequenceRho(values=[0.5, 1.0])
        assert isinstance(config.stop, DistToRefBelow)
        assert config.stop.x_ref == [1.0] * 5
        assert config.x0 == [3.0, 1.5, 2.0, 1.5, 2.0]

    def test_residual_stop_and_start_override(self):
        """Test the residual stop and an explicit starting point"""
        problem = fast_problem("plane3")
        config = to_solver_config(SolverSpec(stop="residual", tol=1e-9, x0=[1.0, -1.0, 0.0]), problem)
        assert config.stop == ResidualBelow(eps=1e-9)
        assert config.x0 == [1.0, -1.0, 0.0]
        assert config.initial_lambda == pytest.approx(0.5 / problem.lipschitz)


@pytest.mark.usefixtures("isolated_settings", "fast_registry")
class TestSolveCommand:
    """Test the solve command and its artifacts"""

    def test_writes_trace_and_report(self, tmp_path):
        """Test a converging run: exit 0, trace and report written"""
        prefix = tmp_path / "plane"
        runspec = RunSpec(problem="plane3", solver=SolverSpec(lam="0.9/L"), output=str(prefix))
        assert cmd_solve(runspec) == EXIT_OK
        trace = artifacts.read_trace(tmp_path / "plane_trace.csv")
        report = artifacts.read_json(tmp_path / "plane_report.json")
        assert report["report"]["status"] == "tol_reached"
        assert report["report"]["iterations"] == len(trace)
        assert trace[-1].dist_ref <= 1e-6
        assert RunSpec.model_validate(report["runspec"]) == runspec
        assert report["constants"]["lambda"] == pytest.approx(0.9 / fast_problem("plane3").lipschitz)
        assert report["assumptions"]
        assert "natural residual" in report["columns"]["residual"]
        assert all(row.residual == row.step_norm for row in trace)

    def test_default_output_location(self, isolated_settings):
        """Test that artifacts go under the configured output directory"""
        assert cmd_solve(RunSpec(problem="scalar-exp-strong")) == EXIT_OK
        assert (isolated_settings.output_dir / "scalar-exp-strong_fbf_trace.csv").exists()

    def test_emit_json_only(self, tmp_path):
        """Test that emit=json skips the trace file"""
        runspec = RunSpec(problem="plane3", output=str(tmp_path / "p"), emit="json")
        cmd_solve(runspec)
        assert (tmp_path / "p_report.json").exists()
        assert not (tmp_path / "p_trace.csv").exists()

    def test_max_iter_exit_code(self, tmp_path):
        """Test that hitting max_iter exits with 2"""
        runspec = RunSpec(problem="plane3", solver=SolverSpec(max_iter=3), output=str(tmp_path / "p"))
        assert cmd_solve(runspec) == EXIT_MAX_ITER
        assert len(artifacts.read_trace(tmp_path / "p_trace.csv")) == 3

    def test_diverged_exit_code(self, tmp_path, monkeypatch):
        """Test that divergence exits with 3 and still writes the report"""
        def explode(*args, **kwargs):
            raise DivergenceError("iterate norm above 1e12", trace=[sample_row()])

        monkeypatch.setattr(bench, "solve", explode)
        runspec = RunSpec(problem="plane3", output=str(tmp_path / "p"))
        assert cmd_solve(runspec) == EXIT_DIVERGED
        report = artifacts.read_json(tmp_path / "p_report.json")
        assert report["report"]["status"] == "diverged"
        assert "1e12" in report["error"]
        assert len(artifacts.read_trace(tmp_path / "p_trace.csv")) == 1

    def test_large_step_is_invalid(self, tmp_path):
        """Test that lambda L >= 1 without the override exits with 1"""
        runspec = RunSpec(problem="plane3", solver=SolverSpec(lam="1.5/L"), output=str(tmp_path / "p"))
        assert guarded(lambda: cmd_solve(runspec)) == EXIT_INVALID

    def test_deterministic_traces(self, tmp_path):
        """Test that repeated runs agree except for timing"""
        for name in ("a", "b"):
            cmd_solve(RunSpec(problem="polytope5", solver=SolverSpec(rho=1.3), output=str(tmp_path / name)))
        first = artifacts.read_trace(tmp_path / "a_trace.csv")
        second = artifacts.read_trace(tmp_path / "b_trace.csv")
        assert len(first) == len(second) > 0
        assert all(x.same_values(y) for x, y in zip(first, second))

    def test_record_stores_history(self, tmp_path):
        """Test that --record writes a history row"""
        runspec = RunSpec(problem="plane3", output=str(tmp_path / "p"))
        cmd_solve(runspec, record=True)
        with session_factory()() as db:
            records = db.execute(select(RunRecord)).scalars().all()
        assert len(records) == 1
        assert (records[0].problem, records[0].method, records[0].status) == ("plane3", "fbf", "tol_reached")
        assert json.loads(records[0].report)["runspec"]["problem"] == "plane3"


@pytest.mark.usefixtures("isolated_settings", "fast_registry")
class TestBatchCommands:
    """Test sweep-rho, compare, flow, certify and list-problems"""

    def test_sweep_rho(self, tmp_path):
        """Test the per-rho artifacts and the summary table"""
        prefix = tmp_path / "sweep"
        assert cmd_sweep_rho("plane3", [1.0, 0.8], SolverSpec(), str(prefix)) == EXIT_OK
        lines = (tmp_path / "sweep_summary.csv").read_text().splitlines()
        assert lines[0] == "rho,iterations,wall_ns"
        rows = [line.split(",") for line in lines[1:]]
        assert [r[0] for r in rows] == ["0.8", "1.0"]
        assert int(rows[1][1]) < int(rows[0][1])
        assert (tmp_path / "sweep_rho0.8_trace.csv").exists()
        assert (tmp_path / "sweep_rho1_report.json").exists()

    def test_sweep_parallel_matches_serial(self, tmp_path):
        """Test that worker count does not change iteration counts"""
        cmd_sweep_rho("plane3", [0.7, 1.0, 1.2], SolverSpec(), str(tmp_path / "one"), workers=1)
        cmd_sweep_rho("plane3", [0.7, 1.0, 1.2], SolverSpec(), str(tmp_path / "two"), workers=3)

        def counts(name):
            return [line.split(",")[:2] for line in (tmp_path / f"{name}_summary.csv").read_text().splitlines()]

        assert counts("one") == counts("two")

    def test_sweep_rejects_empty_list(self, tmp_path):
        """Test that an empty rho list is a precondition error"""
        with pytest.raises(PreconditionError):
            cmd_sweep_rho("plane3", [], SolverSpec(), str(tmp_path / "s"))

    def test_compare(self, tmp_path):
        """Test the method comparison table"""
        methods = ["fbf", "extragradient", "subgradient-extragradient"]
        assert cmd_compare("plane3", methods, SolverSpec(lam="0.9/L"), str(tmp_path / "cmp")) == EXIT_OK
        lines = (tmp_path / "cmp_summary.csv").read_text().splitlines()
        assert lines[0] == "method,lambda,iterations,f_evals,proj_calls,final_dist_ref,status,wall_ns"
        rows = {r[0]: r for r in (line.split(",") for line in lines[1:])}
        assert set(rows) == set(methods)
        assert int(rows["fbf"][4]) == int(rows["fbf"][2])
        assert int(rows["extragradient"][4]) == 2 * int(rows["extragradient"][2])
        assert all(r[6] == "tol_reached" for r in rows.values())

    def test_flow(self, tmp_path):
        """Test the trajectory files and the flow summary"""
        request = FlowRequest(problem="plane3", lambdas=["0.8/L", "0.5/L"], horizon=1.0, h=0.01, sample_stride=10)
        assert cmd_flow(request, str(tmp_path / "flow")) == EXIT_OK
        trajectory = (tmp_path / "flow_lambda0.5_L_trajectory.csv").read_text().splitlines()
        assert trajectory[0] == "t,x_1,x_2,x_3,dist_ref,gap"
        assert len(trajectory) == 1 + 11
        assert (tmp_path / "flow_lambda0.8_L_trajectory.csv").exists()
        summary = (tmp_path / "flow_summary.csv").read_text().splitlines()
        assert len(summary) == 3
        assert all(line.endswith(",ok") for line in summary[1:])

    def test_certify_solve_output(self, tmp_path):
        """Test certifying a trace written by solve"""
        runspec = RunSpec(problem="plane3", output=str(tmp_path / "p"))
        cmd_solve(runspec)
        stream = io.StringIO()
        assert cmd_certify(tmp_path / "p_trace.csv", output=str(tmp_path / "cert.json"), stream=stream) == EXIT_OK
        printed = json.loads(stream.getvalue())
        trace = artifacts.read_trace(tmp_path / "p_trace.csv")
        assert printed["rows_checked"] == len(trace)
        assert printed["fejer_violations"] == 0
        assert printed["prop32_violations"] == 0
        assert printed["rate_violations"] == 0
        assert printed["max_delta"] < 1.0
        assert artifacts.read_json(tmp_path / "cert.json") == printed

    def test_certify_without_sibling_report(self, tmp_path):
        """Test certifying a bare trace without problem constants"""
        rows = [sample_row(k, 0.5 ** k) for k in range(1, 6)]
        path = artifacts.write_trace(tmp_path / "bare.csv", rows)
        stream = io.StringIO()
        assert cmd_certify(path, stream=stream) == EXIT_OK
        printed = json.loads(stream.getvalue())
        assert printed["rows_checked"] == 4
        assert printed["max_delta"] is None

    def test_list_problems(self):
        """Test the problem listing"""
        stream = io.StringIO()
        assert cmd_list_problems(stream=stream) == EXIT_OK
        names = [line.split("\t")[0] for line in stream.getvalue().splitlines()]
        assert names == ["fractional5", "plane3", "polytope5", "scalar-exp", "scalar-exp-strong"]


class TestGuarded:
    """Test the mapping of failures to exit codes"""

    @pytest.mark.parametrize(
        "exc,code",
        [
            (ValueError("bad"), EXIT_INVALID),
            (PreconditionError("bad"), EXIT_INVALID),
            (KeyError("bad"), EXIT_INVALID),
            (FileNotFoundError("missing"), EXIT_INVALID),
            (DivergenceError("blew up"), EXIT_DIVERGED),
        ],
    )
    def test_exit_codes(self, exc, code, caplog):
        """Test each failure class and that it is logged"""
        def fail():
            raise exc

        assert guarded(fail) == code
        assert str(exc.args[0]) in caplog.text

    def test_unexpected_errors_propagate(self):
        """Test that programming errors are not swallowed"""
        def fail():
            raise ZeroDivisionError()

        with pytest.raises(ZeroDivisionError):
            guarded(fail)

    @pytest.mark.parametrize("x0,code", [([3.0], EXIT_DIVERGED), ([-2.0], EXIT_INVALID)])
    def test_domain_errors(self, x0, code):
        """Test that leaving the domain mid-run exits 3 and a bad start exits 1"""
        op = FractionalGradient([[1.0]], [0.0], [1.0], 0.0, 1.0)
        config = SolverConfig(method="projected_gradient", lambda_mode=FixedStep(lam=10.0), x0=x0, max_iter=10)

        def run():
            solve(config, op, Box([-1e9], [1e9]))
            return EXIT_OK

        assert guarded(run) == code
