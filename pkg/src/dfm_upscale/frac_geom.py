"""Stochastic discrete fracture network generation.

Fracture lengths follow a truncated power law, orientations are isotropic on
[0, pi), centers come from a Poisson process, apertures scale linearly with
length and fracture conductivity follows the cubic law.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .geometry import Rect
from .seeding import substream


@dataclass(frozen=True)
class PhysicalConstants:
    gravity: float = 9.81          # m/s^2
    water_density: float = 1000.0  # kg/m^3
    viscosity: float = 1.0e-3      # Pa*s


DEFAULT_CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class PowerLawSpec:
    """Truncated power-law length distribution with density ~ C * r^-alpha."""

    alpha: float
    r_min: float
    r_max: float

    def __post_init__(self):
        if self.alpha == 1.0:
            raise ValueError("alpha = 1 gives a degenerate normalization")
        if not (0.0 < self.r_min < self.r_max):
            raise ValueError(f"need 0 < r_min < r_max, got {self}")

    @property
    def norm_const(self) -> float:
        a = self.alpha
        return (1.0 - a) / (self.r_max ** (1.0 - a) - self.r_min ** (1.0 - a))

    def moment(self, k: int) -> float:
        """E[length^k] in closed form."""
        a = self.alpha
        c = self.norm_const
        p = k + 1.0 - a
        if abs(p) < 1e-12:
            return c * np.log(self.r_max / self.r_min)
        return c * (self.r_max ** p - self.r_min ** p) / p

    @property
    def mean_length(self) -> float:
        return self.moment(1)


@dataclass(frozen=True)
class Fracture:
    id: int
    center: tuple[float, float]
    length: float
    angle: float        # rad, in [0, pi)
    aperture: float     # m
    conductivity: float  # m/s

    @property
    def endpoints(self):
        c = np.asarray(self.center, float)
        h = 0.5 * self.length * np.array([np.cos(self.angle), np.sin(self.angle)])
        return c - h, c + h


@dataclass
class FractureNetwork:
    fractures: list[Fracture]
    domain: Rect
    density: float
    seed: int
    spec: PowerLawSpec | None = None
    aperture_ratio: float | None = None
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    def __len__(self):
        return len(self.fractures)


def sample_power_law(spec: PowerLawSpec, u):
    """Inverse-CDF sample(s) of the truncated power law; u in [0, 1]."""
    u = np.asarray(u, dtype=float)
    if np.any((u < 0.0) | (u > 1.0)):
        raise ValueError("u must lie in [0, 1]")
    p = 1.0 - spec.alpha
    r = (spec.r_min ** p + u * (spec.r_max ** p - spec.r_min ** p)) ** (1.0 / p)
    return np.clip(r, spec.r_min, spec.r_max)


def excluded_area(spec: PowerLawSpec) -> float:
    """Mean-field excluded area of isotropic sticks: (2/pi) * E[length]^2."""
    return (2.0 / np.pi) * spec.mean_length ** 2


def expected_count(spec: PowerLawSpec, density: float, domain_area: float) -> float:
    """Mean fracture count for dimensionless density over a domain area."""
    if density <= 0.0 or domain_area <= 0.0:
        raise ValueError("density and domain_area must be positive")
    return density * domain_area / excluded_area(spec)


def calibrate_alpha(target_count: float, density: float, domain_area: float,
                    r_min: float, r_max: float,
                    bracket=(1.2, 4.5)) -> float:
    """Exponent for which the expected count matches target_count."""

    def gap(alpha):
        return expected_count(PowerLawSpec(alpha, r_min, r_max),
                              density, domain_area) - target_count

    return float(brentq(gap, *bracket, xtol=1e-10))


def fracture_conductivity(length: float, aperture_ratio: float,
                          constants: PhysicalConstants = DEFAULT_CONSTANTS):
    """Aperture and cubic-law conductivity of a fracture of given length."""
    if length <= 0.0 or aperture_ratio <= 0.0:
        raise ValueError("length and aperture_ratio must be positive")
    delta = aperture_ratio * length
    k_f = constants.gravity * constants.water_density * delta ** 2 / (
        12.0 * constants.viscosity)
    return delta, k_f


def generate_dfn(spec: PowerLawSpec, density: float, domain: Rect,
                 aperture_ratio: float,
                 constants: PhysicalConstants = DEFAULT_CONSTANTS,
                 seed: int = 0) -> FractureNetwork:
    """Draw a fracture network: Poisson count, uniform centers and angles,
    power-law lengths. Centers lie inside the domain; geometry may overhang
    (clipping happens at use sites)."""
    rng = substream(seed, "dfn")
    n = int(rng.poisson(expected_count(spec, density, domain.area)))
    cx = rng.uniform(domain.x0, domain.x1, size=n)
    cy = rng.uniform(domain.y0, domain.y1, size=n)
    angles = rng.uniform(0.0, np.pi, size=n)
    lengths = sample_power_law(spec, rng.uniform(0.0, 1.0, size=n))
    fracs = []
    for i in range(n):
        delta, k_f = fracture_conductivity(float(lengths[i]), aperture_ratio,
                                           constants)
        fracs.append(Fracture(
            id=i, center=(float(cx[i]), float(cy[i])),
            length=float(lengths[i]), angle=float(angles[i]),
            aperture=delta, conductivity=k_f))
    return FractureNetwork(fractures=fracs, domain=domain, density=density,
                           seed=seed, spec=spec,
                           aperture_ratio=aperture_ratio, constants=constants)


CSV_COLUMNS = ("id", "cx", "cy", "length", "angle", "aperture", "conductivity")


def save_network(network: FractureNetwork, csv_path):
    """One CSV row per fracture plus a JSON sidecar with generation metadata."""
    csv_path = Path(csv_path)
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for fr in network.fractures:
            w.writerow([fr.id, repr(fr.center[0]), repr(fr.center[1]),
                        repr(fr.length), repr(fr.angle), repr(fr.aperture),
                        repr(fr.conductivity)])
    sidecar = {
        "domain": network.domain.as_tuple(),
        "density": network.density,
        "seed": network.seed,
        "spec": asdict(network.spec) if network.spec else None,
        "aperture_ratio": network.aperture_ratio,
        "constants": asdict(network.constants),
        "count": len(network),
    }
    with open(csv_path.with_suffix(".json"), "w") as f:
        json.dump(sidecar, f, indent=2)


def load_network(csv_path) -> FractureNetwork:
    csv_path = Path(csv_path)
    with open(csv_path.with_suffix(".json")) as f:
        meta = json.load(f)
    fracs = []
    with open(csv_path, newline="") as f:
        for row in csv.DictReader(f):
            fracs.append(Fracture(
                id=int(row["id"]),
                center=(float(row["cx"]), float(row["cy"])),
                length=float(row["length"]), angle=float(row["angle"]),
                aperture=float(row["aperture"]),
                conductivity=float(row["conductivity"])))
    spec = PowerLawSpec(**meta["spec"]) if meta.get("spec") else None
    return FractureNetwork(
        fractures=fracs, domain=Rect(*meta["domain"]),
        density=meta["density"], seed=meta["seed"], spec=spec,
        aperture_ratio=meta.get("aperture_ratio"),
        constants=PhysicalConstants(**meta["constants"]))
