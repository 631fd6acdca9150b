"""Operation counts and energy estimates for spiking vs. dense networks.

Layer dimensions are given as the width sequence ``[M0, M1, ..., ML]``; layer i
maps ``N_i = M_{i-1}`` inputs to ``M_i`` outputs. Hidden layers of a spiking
network cost one accumulate per synapse per spike, the output layer one
multiply-accumulate per synapse per forward pass.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

E_AC_PJ = 0.1
E_MAC_PJ = 3.2
BACKWARD_FACTOR = 2.0


@dataclass(frozen=True)
class EnergyCoefficients:
    e_ac: float = E_AC_PJ
    e_mac: float = E_MAC_PJ

    def __post_init__(self) -> None:
        if not (self.e_ac > 0 and self.e_mac > 0):
            raise ValueError("energy coefficients must be > 0")


def _layer_products(layer_dims: Sequence[int]) -> list[int]:
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ValueError("need at least an input and an output width")
    return [n * m for n, m in zip(dims[:-1], dims[1:])]


def flops_spiking(layer_dims: Sequence[int], firing_rates: Sequence[float]) -> float:
    """Sum over spiking layers of ``N_i * M_i * rate_i``.

    ``layer_dims`` lists only the spiking layers' widths, i.e. ``len(firing_rates) + 1``
    entries. Counts are fractional because rates are averages.
    """
    products = _layer_products(layer_dims)
    rates = np.asarray(firing_rates, dtype=float)
    if rates.shape != (len(products),):
        raise ValueError(f"expected {len(products)} firing rates, got {rates.shape}")
    if np.any(rates < 0) or np.any(rates > 1):
        raise ValueError("firing rates must lie in [0, 1]")
    return float(sum(p * r for p, r in zip(products, rates)))


def flops_baseline(layer_dims: Sequence[int]) -> int:
    return sum(_layer_products(layer_dims))


def energy_spiking(coeffs: EnergyCoefficients, flops: float, steps: int, output_macs: int) -> float:
    """``E_AC * flops * steps + E_MAC * output_macs`` in pJ."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return coeffs.e_ac * flops * steps + coeffs.e_mac * output_macs


def energy_baseline(coeffs: EnergyCoefficients, layer_dims: Sequence[int]) -> float:
    return coeffs.e_mac * flops_baseline(layer_dims)


def network_energy(coeffs: EnergyCoefficients, layer_dims: Sequence[int],
                   firing_rates: Sequence[float], steps: int) -> float:
    """Per-sample forward energy of a full spiking network (hidden layers + output)."""
    dims = list(layer_dims)
    flops = flops_spiking(dims[:-1], firing_rates)
    return energy_spiking(coeffs, flops, steps, dims[-2] * dims[-1])


@dataclass(frozen=True)
class PassEvent:
    """``count`` samples pushed through one network, forward or backward."""

    phase: str
    network: str  # "spiking" or "dense"
    layer_dims: tuple[int, ...]
    count: int = 1
    firing_rates: tuple[float, ...] = ()
    steps: int = 1
    backward: bool = False


@dataclass
class PhaseTotals:
    forward_passes: int = 0
    backward_passes: int = 0
    flops_ac: float = 0.0
    flops_mac: float = 0.0
    energy_pj: float = 0.0
    baseline_pj: float = 0.0
    # count-weighted sum of measured rates, for the running average
    rate_sum: np.ndarray | None = None
    rate_weight: int = 0

    @property
    def mean_firing_rates(self) -> np.ndarray:
        if self.rate_sum is None or self.rate_weight == 0:
            return np.zeros(0)
        return self.rate_sum / self.rate_weight


@dataclass
class EnergyLedger:
    """Energy of the network as run (``energy_pj``) next to its dense equivalent."""

    coeffs: EnergyCoefficients = field(default_factory=EnergyCoefficients)
    phases: dict[str, PhaseTotals] = field(default_factory=dict)

    def phase(self, name: str) -> PhaseTotals:
        return self.phases.setdefault(name, PhaseTotals())

    def total(self, attr: str = "energy_pj") -> float:
        return float(sum(getattr(p, attr) for p in self.phases.values()))

    def merge(self, other: "EnergyLedger") -> "EnergyLedger":
        for name, tot in other.phases.items():
            mine = self.phase(name)
            mine.forward_passes += tot.forward_passes
            mine.backward_passes += tot.backward_passes
            mine.flops_ac += tot.flops_ac
            mine.flops_mac += tot.flops_mac
            mine.energy_pj += tot.energy_pj
            mine.baseline_pj += tot.baseline_pj
            if tot.rate_sum is not None:
                mine.rate_sum = tot.rate_sum.copy() if mine.rate_sum is None else mine.rate_sum + tot.rate_sum
                mine.rate_weight += tot.rate_weight
        return self


def event_cost(coeffs: EnergyCoefficients, event: PassEvent) -> tuple[float, float, float, float]:
    """(flops_ac, flops_mac, energy_pj, baseline_pj) of one event."""
    dims = list(event.layer_dims)
    scale = event.count * (BACKWARD_FACTOR if event.backward else 1.0)
    dense_macs = flops_baseline(dims)
    baseline = coeffs.e_mac * dense_macs * scale
    if event.network == "spiking":
        flops = flops_spiking(dims[:-1], event.firing_rates)
        out_macs = dims[-2] * dims[-1]
        energy = energy_spiking(coeffs, flops, event.steps, out_macs) * scale
        return flops * event.steps * scale, out_macs * scale, energy, baseline
    if event.network == "dense":
        return 0.0, dense_macs * scale, baseline, baseline
    raise ValueError(f"unknown network kind {event.network!r}")


def ledger_accumulate(ledger: EnergyLedger, event: PassEvent) -> EnergyLedger:
    """Add one event to its phase; backward passes cost twice the forward count."""
    ac, mac, energy, baseline = event_cost(ledger.coeffs, event)
    tot = ledger.phase(event.phase)
    if event.backward:
        tot.backward_passes += event.count
    else:
        tot.forward_passes += event.count
    tot.flops_ac += ac
    tot.flops_mac += mac
    tot.energy_pj += energy
    tot.baseline_pj += baseline
    if event.network == "spiking" and not event.backward:
        rates = np.asarray(event.firing_rates, dtype=float) * event.count
        tot.rate_sum = rates if tot.rate_sum is None else tot.rate_sum + rates
        tot.rate_weight += event.count
    return ledger


COSTING_NOTE = f"backward passes costed at {BACKWARD_FACTOR:g}x forward; energies in pJ"
REPORT_COLUMNS = ("phase", "network", "forward_passes", "flops_ac", "flops_mac", "energy_pj")


def report_rows(ledger: EnergyLedger, network: str = "spiking",
                phases: Iterable[str] = ("training", "inference")) -> list[tuple]:
    """Rows of the energy comparison table, one ratio row (baseline/as-run) per phase."""
    rows = []
    for name in phases:
        tot = ledger.phases.get(name, PhaseTotals())
        passes = tot.forward_passes
        rows.append((name, network, passes, tot.flops_ac, tot.flops_mac, tot.energy_pj))
        baseline_mac = tot.baseline_pj / ledger.coeffs.e_mac
        rows.append((name, "baseline", passes, 0.0, baseline_mac, tot.baseline_pj))
        ratio = tot.baseline_pj / tot.energy_pj if tot.energy_pj > 0 else float("nan")
        rows.append((name, "ratio_baseline_over_" + network, passes, "", "", ratio))
    return rows


def format_report(rows: Sequence[tuple], header_lines: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    writer.writerows(rows)
    return buf.getvalue()
