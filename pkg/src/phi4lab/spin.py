"""The ferromagnetic phi^4 Gibbs measure on a finite region and its two
samplers: single-site heat-bath (exact conditional resampling) and
Euler-Maruyama Langevin steps.

The Hamiltonian is H(phi) = -sum_xy J_xy phi_x phi_y - sum_x h_x phi_x over
internal edges and vertices; the single-site factor exp(-g phi^4 - a phi^2)
completes the unnormalised weight. The heat-bath conditional at x is the
tilted single-site density with tilt beta*(sum_y J_xy phi_y + h_x).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import BoundaryField, Region
from .singlesite import SingleSiteParams, log_density, sample_tilted_batch

SCHEDULES = ("sequential", "random", "checkerboard")


@dataclass
class ModelParams:
    region: Region
    beta: float
    g: float
    a: float
    J: float | np.ndarray = 1.0
    h: float | np.ndarray | BoundaryField = 0.0
    J_edges: np.ndarray = field(init=False, repr=False)
    h_sites: np.ndarray = field(init=False, repr=False)
    J_nbr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        n, n_e = self.region.n_vertices, len(self.region.edges)
        J = self.J
        self.J_edges = np.full(n_e, float(J)) if np.isscalar(J) else np.asarray(J, dtype=float).copy()
        if self.J_edges.shape != (n_e,):
            raise ValueError("J must be scalar or one value per internal edge")
        if np.any(self.J_edges < 0):
            raise ValueError("couplings must be >= 0")
        h = self.h.values if isinstance(self.h, BoundaryField) else self.h
        self.h_sites = np.full(n, float(h)) if np.isscalar(h) else np.asarray(h, dtype=float).copy()
        if self.h_sites.shape != (n,):
            raise ValueError("h must be scalar or one value per vertex")

        # per-(vertex, direction) coupling table aligned with region.nbr
        J_nbr = np.zeros((n, 2 * self.region.d))
        edges = self.region.edges
        diff = self.region.vertices[edges[:, 1]] - self.region.vertices[edges[:, 0]]
        axis = np.argmax(diff != 0, axis=1)
        J_nbr[edges[:, 0], 2 * axis] = self.J_edges
        J_nbr[edges[:, 1], 2 * axis + 1] = self.J_edges
        self.J_nbr = J_nbr

    @property
    def single_site(self) -> SingleSiteParams:
        return SingleSiteParams(self.g, self.a)

    @property
    def uniform_J(self) -> bool:
        return bool(np.all(self.J_edges == (self.J_edges[0] if len(self.J_edges) else 1.0)))


@dataclass
class SpinConfig:
    region: Region
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.region.n_vertices,):
            raise ValueError("one spin value per interior vertex required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spin values must be finite")

    def copy(self) -> "SpinConfig":
        return SpinConfig(self.region, self.values.copy())


def hamiltonian(phi: SpinConfig | np.ndarray, params: ModelParams) -> float:
    v = phi.values if isinstance(phi, SpinConfig) else np.asarray(phi, dtype=float)
    edges = params.region.edges
    pair = 0.0
    if len(edges):
        pair = float(np.sum(params.J_edges * v[edges[:, 0]] * v[edges[:, 1]]))
    return -pair - float(np.dot(params.h_sites, v))


def neighbour_field(values: np.ndarray, params: ModelParams) -> np.ndarray:
    """sum_{y ~ x} J_xy phi_y for every x (vectorised gather over nbr table)."""
    padded = np.append(values, 0.0)
    return np.einsum("ik,ik->i", params.J_nbr, padded[params.region.nbr])


def tilt_vector(values: np.ndarray, params: ModelParams) -> np.ndarray:
    """Heat-bath tilts beta*(sum_y J_xy phi_y + h_x) for all sites at once."""
    return params.beta * (neighbour_field(values, params) + params.h_sites)


def heatbath_log_rate(phi: SpinConfig, x: int, s: float, params: ModelParams) -> float:
    """Unnormalised log transition density of the heat-bath move phi_x -> s.
    The normaliser depends only on the neighbours, so it cancels in the
    detailed-balance identity."""
    v = phi.values
    nbr = params.region.nbr[x]
    tilt = params.beta * (float(np.dot(params.J_nbr[x], np.append(v, 0.0)[nbr])) + params.h_sites[x])
    return float(log_density(s, params.single_site, tilt))


def log_weight(phi: SpinConfig, params: ModelParams) -> float:
    """Unnormalised log of the Gibbs density: -beta H + sum_x log rho-factor."""
    v = phi.values
    return -params.beta * hamiltonian(phi, params) + float(
        np.sum(log_density(v, params.single_site))
    )


def heatbath_update(phi: SpinConfig, x: int, params: ModelParams, rng) -> SpinConfig:
    """Resample the spin at x from its exact conditional given the rest."""
    if not (0 <= x < params.region.n_vertices):
        raise ValueError(f"vertex index {x} out of range")
    v = phi.values.copy()
    nbr = params.region.nbr[x]
    tilt = params.beta * (float(np.dot(params.J_nbr[x], np.append(phi.values, 0.0)[nbr])) + params.h_sites[x])
    v[x] = sample_tilted_batch(params.single_site, np.array([tilt]), rng)[0]
    return SpinConfig(phi.region, v)


def heatbath_sweep(phi: SpinConfig, params: ModelParams, rng, schedule: str = "sequential") -> SpinConfig:
    """|Lambda| single-site heat-bath updates.

    sequential: lexicographic site order. random: |Lambda| uniformly chosen
    sites. checkerboard: the two parity classes updated in two vectorised
    batches (a different but still stationary chain).
    """
    if schedule not in SCHEDULES:
        raise ValueError(f"schedule must be one of {SCHEDULES}")
    region, ss = params.region, params.single_site
    n = region.n_vertices
    v = phi.values.copy()

    if schedule == "checkerboard":
        for colour in (0, 1):
            idx = np.nonzero(region.parity == colour)[0]
            padded = np.append(v, 0.0)
            tilts = params.beta * (
                np.einsum("ik,ik->i", params.J_nbr[idx], padded[region.nbr[idx]])
                + params.h_sites[idx]
            )
            v[idx] = sample_tilted_batch(ss, tilts, rng)
        return SpinConfig(region, v)

    sites = np.arange(n) if schedule == "sequential" else rng.integers(0, n, size=n)
    for x in sites:
        padded = np.append(v, 0.0)
        tilt = params.beta * (float(np.dot(params.J_nbr[x], padded[region.nbr[x]])) + params.h_sites[x])
        v[x] = sample_tilted_batch(ss, np.array([tilt]), rng)[0]
    return SpinConfig(region, v)


def langevin_drift(values: np.ndarray, params: ModelParams) -> np.ndarray:
    """beta*Lap_J(phi) - grad U(phi) (+ beta h), with the lattice potential
    U = sum_x g phi^4 + (a - beta deg_J(x)/2) phi^2. The degree terms cancel,
    so this equals -grad(beta H + sum_x g phi^4 + a phi^2) identically."""
    deg_J = params.J_nbr.sum(axis=1)
    lap = neighbour_field(values, params) - deg_J * values
    grad_U = 4.0 * params.g * values ** 3 + 2.0 * (params.a - params.beta * deg_J / 2.0) * values
    return params.beta * lap - grad_U + params.beta * params.h_sites


def langevin_step(phi: SpinConfig, params: ModelParams, dt: float, rng) -> SpinConfig:
    """Euler-Maruyama step phi' = phi + dt*drift + sqrt(2 dt) * N(0,1)."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    v = phi.values
    noise = rng.standard_normal(len(v))
    return SpinConfig(phi.region, v + dt * langevin_drift(v, params) + np.sqrt(2.0 * dt) * noise)


def magnetization(phi: SpinConfig | np.ndarray) -> float:
    v = phi.values if isinstance(phi, SpinConfig) else np.asarray(phi, dtype=float)
    return float(v.mean())
