"""
Command handler for singular-hjb.
Runs the solve, simulate, verify and convergence pipelines and maps their
outcome onto the exit-code contract.
"""

import asyncio
import logging
import os
from typing import Dict, List, Optional

from config import RunConfig
from managers.file_manager import FileManager
from managers.report_manager import ReportManager, estimate_lines, verify_summary_json
from model.model_spec import require_assumptions
from simulation.liquidation_sim import McEstimate, paired_gap, simulate_costs, simulate_liquidation
from simulation.policies import ValueSource
from solvers.closed_form import closed_form_for
from solvers.convergence import (StudyResult, domain_study, ladder_study, spatial_study,
                                 temporal_study, write_rows)
from solvers.pde_solver import check_envelopes, solve_finite, solve_singular
from solvers.value_field import FieldValue
from tools.verification_suites import VerificationContext, run_suites
from utils.terminal_utils import print_colored, print_status, print_table

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAULT = 1
EXIT_FAILED = 2

COMMANDS = ("solve", "simulate", "verify", "convergence")


class CommandHandler:
    """
    Runs one subcommand against a loaded run configuration.
    """

    def __init__(self, run: RunConfig, file_manager: FileManager):
        """
        Initialize the command handler.

        Args:
            run: Validated run configuration
            file_manager: Writer for the output directory
        """
        self.run = run
        self.file_manager = file_manager

    async def dispatch(self, command: str) -> int:
        """
        Run a subcommand.

        Returns:
            Exit code: 0 success, 2 certificate or verification failure
        """
        handler = getattr(self, f"cmd_{command}", None)
        if command not in COMMANDS or handler is None:
            raise ValueError(f"unknown command '{command}'")
        return await handler()

    def _header(self, command: str) -> ReportManager:
        report = ReportManager(f"singular-hjb {command}")
        report.add_text("model", f"source: {self.run.model.source}")
        return report

    async def cmd_solve(self) -> int:
        spec = self.run.spec
        assumptions = require_assumptions(spec)
        grid = self.run.build_grid()
        report = self._header("solve")
        report.add_text("assumptions", assumptions.summary())
        report.add_section("grid", [f"y in [{grid.y_min:g}, {grid.y_max:g}], n_y={grid.n_y}, "
                                    f"dt={grid.dt:g}, T={grid.T:g}",
                                    f"upwind={'yes' if self.run.grid.upwind else 'no'}"])

        if self.run.finite_N is not None:
            N = self.run.finite_N
            print_status("🧮", f"Solving finite terminal value N={N:g}", "magenta")
            field_ = await asyncio.to_thread(solve_finite, spec, N, grid, self.run.grid.upwind)
            envelopes = check_envelopes(spec, field_)
            report.add_section("finite solve", [f"N={N:g}", envelopes.summary()])
            exit_code = EXIT_OK
        else:
            s = self.run.singular
            print_status("🧮", "Solving the singular problem on the N-ladder", "magenta")
            result = await asyncio.to_thread(solve_singular, spec, grid, s.delta, s.tol, s.N0,
                                             self.run.grid.upwind, s.max_rungs)
            field_ = result.field
            report.add_text("singular solve", result.summary())
            exit_code = EXIT_OK if result.barrier.passed else EXIT_FAILED
            print_colored(result.summary(), "green" if exit_code == EXIT_OK else "yellow")

        await self.file_manager.write_field(field_)
        await self.file_manager.write_text("solve_report.txt", report.render())
        if exit_code == EXIT_FAILED:
            print_colored("Barrier certificate failed", "red", bold=True)
        else:
            print_colored(f"Wrote field and report to {self.file_manager.out_dir}", "green")
        return exit_code

    async def _value_source(self) -> ValueSource:
        """Closed form for presets, else the solved field; only feedback reads it."""
        kind = self.run.model.closed_form
        if kind:
            return closed_form_for(self.run.spec, kind)
        path = self.run.mc.field_path or self.file_manager.path("field.shjb")
        field_ = await self.file_manager.read_field(path)
        return FieldValue(field_)

    async def cmd_simulate(self) -> int:
        spec = self.run.spec
        mc = self.run.mc
        require_assumptions(spec)
        grid = self.run.build_grid()
        source = await self._value_source() if "feedback" in mc.policies else None
        print_status("🎲", f"Simulating {mc.paths} path(s) per policy with seed {mc.seed}", "magenta")

        costs = {}
        estimates: Dict[str, McEstimate] = {}
        for policy in mc.policies:
            costs[policy] = await asyncio.to_thread(
                simulate_costs, spec, source, mc.x0, mc.y0, grid, policy, mc.paths, mc.seed,
                mc.workers, mc.chunk_size)
            estimates[policy] = McEstimate.from_samples(costs[policy], mc.seed)

        gap: Optional[McEstimate] = None
        if "feedback" in costs and "twap" in costs:
            gap = paired_gap(costs["feedback"], costs["twap"], mc.seed)

        lines = estimate_lines(estimates, gap)
        await self.file_manager.write_text("mc_estimates.txt", "\n".join(lines) + "\n")
        for line in lines:
            print_colored(line, "cyan")
        if gap is not None:
            print_colored(f"feedback beats TWAP by {gap.mean:.6f} (SE {gap.se:.6f})", "green", bold=True)

        for i in range(mc.trajectories):
            for policy in mc.policies:
                trajectory = await asyncio.to_thread(simulate_liquidation, spec, source, mc.x0, mc.y0,
                                                     grid, policy, mc.seed, i)
                await self.file_manager.write_csv(f"trajectory_{policy}_{i}.csv", trajectory.write_csv)
        return EXIT_OK

    async def cmd_verify(self) -> int:
        names = self.run.verify.suites
        if not names:
            await self.file_manager.write_text("verify_summary.json", verify_summary_json([]))
            await self.file_manager.write_text("verify_report.txt", self._header("verify").render())
            print_colored("No suites selected", "yellow")
            return EXIT_OK

        require_assumptions(self.run.spec)
        context = VerificationContext(self.run)
        print_status("🔍", f"Running suites: {', '.join(names)}", "magenta")
        results = await asyncio.to_thread(run_suites, context, names)

        report = self._header("verify")
        for result in results:
            report.add_section(result.suite, [f"status: {result.status}",
                                              f"worst margin: {result.worst_margin:.6e}",
                                              result.detail])
        await self.file_manager.write_text("verify_summary.json", verify_summary_json(results))
        await self.file_manager.write_text("verify_report.txt", report.render())

        print_table(["suite", "status", "worst margin"],
                    [(r.suite, r.status, f"{r.worst_margin:.3e}") for r in results])
        failed = [r.suite for r in results if not r.passed]
        if failed:
            print_colored(f"Failed suites: {', '.join(failed)}", "red", bold=True)
            return EXIT_FAILED
        print_colored("All suites passed", "green", bold=True)
        return EXIT_OK

    async def cmd_convergence(self) -> int:
        spec = self.run.spec
        conv = self.run.convergence
        require_assumptions(spec)
        grid = self.run.build_grid()
        studies: List[StudyResult] = []

        if spec.is_y_independent():
            studies.append(await asyncio.to_thread(temporal_study, spec, conv.N, grid, conv.dts))
        else:
            logger.info("skipping temporal study: coefficients depend on y")
        if len(conv.n_ys) > 1:
            studies.append(await asyncio.to_thread(spatial_study, spec, conv.N, grid, conv.n_ys))
        if conv.domain and grid.n_y % 2 == 1:
            studies.append(await asyncio.to_thread(domain_study, spec, conv.N, grid))
        if conv.ladder:
            s = self.run.singular
            studies.append(await asyncio.to_thread(ladder_study, spec, grid, s.delta, s.tol, s.N0,
                                                  s.max_rungs))

        await self.file_manager.write_csv("convergence.csv", lambda stream: write_rows(stream, studies))
        for study in studies:
            if study.orders:
                print_colored(study.summary(), "cyan")
            else:
                for row in study.rows:
                    print_colored(f"{study.name}: dt={row.dt:g} dy={row.dy:g} error={row.error:.3e}", "cyan")
        print_colored(f"Wrote {os.path.join(self.file_manager.out_dir, 'convergence.csv')}", "green")
        return EXIT_OK
