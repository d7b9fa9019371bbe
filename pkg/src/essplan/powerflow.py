"""Exact AC power flow for radial feeders by backward/forward sweep on the pi-model.

This is the ground-truth engine used to certify optimization output: it solves
the unrelaxed branch-flow equations (the squared-current relation taken as an
equality) with complex phasor arithmetic, independently of any conic modeling.
Sign conventions match the optimization side: positive injection = consumption,
a line's per-end shunt generates reactive power, and all voltages/currents are
reported squared.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

from .grid import RadialNetwork

__all__ = ["PfSolution", "OracleReport", "solve_pf", "verify_against_oracle"]


class PowerFlowError(RuntimeError):
    pass


@dataclass
class PfSolution:
    v_sq: dict[int, float]          # squared voltage magnitude at each line's downstream bus
    i_sq: dict[int, float]          # squared longitudinal current per line
    flow_top: dict[int, complex]    # complex power injected into each line from its upstream bus
    flow_bot: dict[int, complex]    # complex power injected into the downstream bus from the line
    slack_power: complex            # net complex power drawn from the slack bus
    converged: bool
    iterations: int

    def losses(self, net: RadialNetwork) -> float:
        """Total active losses sum(r_l * f_l), pu."""
        return sum(net.lines[l].r * self.i_sq[l] for l in self.i_sq)


def solve_pf(net: RadialNetwork, injections: dict[int, complex], tol: float = 1e-10,
             max_iter: int = 200) -> PfSolution:
    """Backward/forward sweep from a flat start.

    injections: net complex prosumption per non-slack bus (pu, consumption
    positive), including any storage/curtailment adjustment. Buses omitted
    from the mapping carry zero injection.
    """
    v_slack = cmath.sqrt(net.slack_v)  # slack phasor, angle reference 0
    order = net.line_order  # parents before children
    volts: dict[int, complex] = {lid: v_slack for lid in order}
    series: dict[int, complex] = {lid: 0.0 + 0.0j for lid in order}

    def volt_at(bus: int) -> complex:
        return v_slack if bus == net.slack_id else volts[bus]

    iterations = 0
    converged = False
    max_dv = math.inf
    for iterations in range(1, max_iter + 1):
        # backward: accumulate series currents leaf-to-root
        for lid in reversed(order):
            line = net.lines[lid]
            v_l = volts[lid]
            s_l = injections.get(lid, 0.0 + 0.0j)
            cur = (s_l / v_l).conjugate() + 1j * line.b * v_l  # load + bottom shunt
            for mid in net.children[lid]:
                cur += series[mid] + 1j * net.lines[mid].b * v_l  # child series + child top shunt
            series[lid] = cur
        # top shunts of root lines hang on the slack and do not affect sweeps
        max_dv = 0.0
        for lid in order:
            line = net.lines[lid]
            v_new = volt_at(line.up) - complex(line.r, line.x) * series[lid]
            max_dv = max(max_dv, abs(v_new - volts[lid]))
            volts[lid] = v_new
        if max_dv < tol:
            converged = True
            break
    if not converged:
        raise PowerFlowError(
            f"backward/forward sweep did not converge in {max_iter} iterations "
            f"(last voltage update {max_dv:.3e}); loading may be infeasible"
        )

    v_sq = {lid: abs(volts[lid]) ** 2 for lid in order}
    i_sq = {lid: abs(series[lid]) ** 2 for lid in order}
    flow_top: dict[int, complex] = {}
    flow_bot: dict[int, complex] = {}
    for lid in order:
        line = net.lines[lid]
        v_up_sq = net.slack_v if line.up == net.slack_id else v_sq[line.up]
        v_up = volt_at(line.up)
        flow_top[lid] = v_up * series[lid].conjugate() - 1j * line.b * v_up_sq
        flow_bot[lid] = volts[lid] * series[lid].conjugate() + 1j * line.b * v_sq[lid]
    slack = sum(flow_top[lid] for lid in net.children[net.slack_id])
    return PfSolution(
        v_sq=v_sq,
        i_sq=i_sq,
        flow_top=flow_top,
        flow_bot=flow_bot,
        slack_power=slack,
        converged=True,
        iterations=iterations,
    )


@dataclass
class OracleReport:
    max_dv: float                   # worst |v_model - v_pf|, pu^2
    max_df: float                   # worst |f_model - f_pf|, pu^2
    max_dflow: float                # worst |S^t_model - S^t_pf|, pu
    passed: bool
    tol: float
    per_line: dict[int, dict] = field(default_factory=dict)

    def worst_line(self) -> int | None:
        if not self.per_line:
            return None
        return max(
            self.per_line,
            key=lambda l: max(self.per_line[l]["dv"], self.per_line[l]["df"], self.per_line[l]["dflow"]),
        )


def verify_against_oracle(net: RadialNetwork, opf_solution: dict, injections: dict[int, complex],
                          tol: float = 1e-6) -> OracleReport:
    """Re-solve the feeder with the exact sweep and compare state variables.

    opf_solution carries per-line dicts ``v_sq``, ``i_sq`` and complex ``flow_top``
    (sending-end power). Residuals above ``tol`` fail the report.
    """
    pf = solve_pf(net, injections)
    per_line: dict[int, dict] = {}
    max_dv = max_df = max_dflow = 0.0
    for lid in net.lines:
        dv = abs(opf_solution["v_sq"][lid] - pf.v_sq[lid])
        df = abs(opf_solution["i_sq"][lid] - pf.i_sq[lid])
        dflow = abs(complex(opf_solution["flow_top"][lid]) - pf.flow_top[lid])
        per_line[lid] = {"dv": dv, "df": df, "dflow": dflow}
        max_dv = max(max_dv, dv)
        max_df = max(max_df, df)
        max_dflow = max(max_dflow, dflow)
    return OracleReport(
        max_dv=max_dv,
        max_df=max_df,
        max_dflow=max_dflow,
        passed=max(max_dv, max_df, max_dflow) <= tol,
        tol=tol,
        per_line=per_line,
    )
