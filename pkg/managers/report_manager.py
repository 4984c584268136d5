"""
Collects the human-readable and machine-readable reports of a run.
"""

import json
from typing import Dict, List, Optional, Sequence, Tuple

from simulation.liquidation_sim import McEstimate


class ReportManager:
    """
    Accumulates titled report sections and renders them as plain text.
    """

    def __init__(self, title: str):
        """
        Initialize the report.

        Args:
            title: First line of the rendered report
        """
        self.title = title
        self.sections: List[Tuple[str, List[str]]] = []

    def add_section(self, heading: str, lines: Sequence[str] = ()) -> None:
        self.sections.append((heading, list(lines)))

    def add_text(self, heading: str, text: str) -> None:
        """Add a section from a multi-line string such as a report summary."""
        self.add_section(heading, text.splitlines())

    def render(self) -> str:
        out = [self.title, "=" * len(self.title)]
        for heading, lines in self.sections:
            out.append("")
            if heading:
                out.append(f"[{heading}]")
            out.extend(lines)
        return "\n".join(out) + "\n"


def estimate_lines(estimates: Dict[str, McEstimate], gap: Optional[McEstimate] = None) -> List[str]:
    """One `<policy> mean=... se=... n=... seed=...` line per policy, then the paired gap."""
    lines = [f"{name} {estimate.format_line()}" for name, estimate in estimates.items()]
    if gap is not None:
        lines.append(f"gap(twap-feedback) {gap.format_line()}")
    return lines


def verify_summary_json(results: Sequence[object]) -> str:
    """Machine-readable summary: a list of {suite, status, worst_margin, detail}."""
    return json.dumps([result.to_dict() for result in results], indent=2) + "\n"
