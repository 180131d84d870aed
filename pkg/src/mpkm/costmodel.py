"""Energy and operation-count model.

Symbolic costs for a 1 x M by M x M product done four ways (multiply
accumulate, MP, a conventional kernel machine and the MP kernel machine),
plus a report that prices the operations actually counted by the audit.

Counter mapping for the measured section: ``adds`` and ``subs`` are both
priced as additions, ``shifts`` are free (wiring in hardware),
``compares`` are priced at ``c_cmp`` and ``multiplies`` at ``c_mult``.
Inside the MP solver the per-round rectified sum over the active inputs is
what the symbolic M*F*R term stands for; the audit records all adds
regardless of where they occur, so measured totals are an upper bound on
that term.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .fxp import AuditCounters


@dataclass(frozen=True)
class EnergyConstants:
    """Per-operation energies in pJ. ``c_cmp`` is an assumed value."""

    c_mult: float = 0.2
    c_add: float = 0.03
    c_cmp: float = 0.01

    def __post_init__(self):
        if min(self.c_mult, self.c_add, self.c_cmp) < 0:
            raise ValueError("energy constants must be >= 0")


@dataclass(frozen=True)
class CostParams:
    M: int
    R: int = 10
    F: float = 1.0

    def __post_init__(self):
        if self.M < 1 or self.R < 1:
            raise ValueError("M and R must be >= 1")
        if not 0.0 < self.F <= 1.0:
            raise ValueError("sparsity F must lie in (0, 1]")


def cost_mvm(p: CostParams, e: EnergyConstants = EnergyConstants()) -> float:
    """Multiply-accumulate product: M^2 multiplies and M^2 - M adds."""
    m = p.M
    return m * m * e.c_mult + (m * m - m) * e.c_add


def cost_mp(p: CostParams, e: EnergyConstants = EnergyConstants()) -> float:
    """MP product: M^2 operand adds, M*F*R active-set adds, M*R compares."""
    m = p.M
    return (m * m + m * p.F * p.R) * e.c_add + m * p.R * e.c_cmp


def cost_km(p: CostParams, e: EnergyConstants = EnergyConstants()) -> float:
    """Conventional kernel machine with M stored vectors."""
    m = p.M
    return (m * m + m) * e.c_mult + (m * m + m - 1) * e.c_add


def cost_mpkm(p: CostParams, e: EnergyConstants = EnergyConstants()) -> float:
    """MP kernel machine with M stored vectors."""
    m = p.M
    return (p.F * p.R * m + 2 * m * m + 1) * e.c_add + p.R * m * e.c_cmp


def estimate_sparsity(source) -> float:
    """Fraction of MP inputs that end in the active set.

    ``source`` is an :class:`AuditCounters` (uses its mp_inputs/mp_active
    tallies) or an iterable of MP results (anything with ``active_mask``).
    """
    if isinstance(source, AuditCounters):
        inputs, active = source.mp_inputs, source.mp_active
    else:
        inputs = active = 0
        for res in source:
            mask = np.asarray(res.active_mask)
            inputs += mask.size
            active += int(np.count_nonzero(mask))
    if inputs == 0:
        raise ValueError("no MP evaluations recorded")
    f = active / inputs
    if f <= 0.0:
        raise ValueError("no active MP inputs recorded")
    return f


@dataclass
class CostReport:
    counters: AuditCounters
    energy: EnergyConstants
    add_pj: float
    cmp_pj: float
    mult_pj: float

    @property
    def total_pj(self) -> float:
        return self.add_pj + self.cmp_pj + self.mult_pj

    def measured(self) -> dict:
        out = {k: v for k, v in self.counters.as_dict().items()}
        out.update(add_pj=self.add_pj, cmp_pj=self.cmp_pj, mult_pj=self.mult_pj,
                   total_pj=self.total_pj)
        if self.counters.mp_inputs:
            out["sparsity"] = estimate_sparsity(self.counters)
        return out


def audit_report(counters: AuditCounters, e: EnergyConstants = EnergyConstants(),
                 mp_path: bool = True) -> CostReport:
    """Price measured counts. With ``mp_path`` any multiply is an error."""
    if mp_path and counters.multiplies != 0:
        raise AssertionError(f"MP datapath performed {counters.multiplies} multiplies")
    return CostReport(
        counters=counters,
        energy=e,
        add_pj=(counters.adds + counters.subs) * e.c_add,
        cmp_pj=counters.compares * e.c_cmp,
        mult_pj=counters.multiplies * e.c_mult,
    )


def symbolic_costs(p: CostParams, e: EnergyConstants = EnergyConstants()) -> dict:
    return {
        "mvm_pj": cost_mvm(p, e),
        "mp_pj": cost_mp(p, e),
        "km_pj": cost_km(p, e),
        "mpkm_pj": cost_mpkm(p, e),
    }


def cost_json(p: CostParams, report: CostReport | None = None,
              e: EnergyConstants = EnergyConstants()) -> str:
    """JSON document with a ``symbolic`` and (when given) ``measured`` section."""
    doc = {
        "params": asdict(p),
        "energy_pj": asdict(e),
        "symbolic": symbolic_costs(p, e),
        "measured": report.measured() if report is not None else None,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


__all__ = [
    "EnergyConstants", "CostParams", "cost_mvm", "cost_mp", "cost_km", "cost_mpkm",
    "estimate_sparsity", "CostReport", "audit_report", "symbolic_costs", "cost_json",
]
