"""Run-length scenarios: part families with a defect, turned into spectrum streams.

A scenario supplies Phase-I in-control spectra and a Phase-II stream. The
generated form computes every spectrum on demand. The banked form draws from
pools of precomputed spectra, which keeps large replication counts
affordable: each replication walks a fresh random permutation of the pools,
so no part appears twice within a replication until a pool is exhausted.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from .partgen import (
    NoiseModel,
    gen_barrel_cylinder,
    gen_open_variant,
    gen_sphere_mesh,
    gen_voxel_part,
    polar_cap,
)
from .spectra import SpectrumConfig, compute_spectrum

FAMILIES = ("sphere", "barrel", "open-barrel", "voxel-hole")
_DEFAULT_BC = {"sphere": "closed", "barrel": "closed", "open-barrel": "dirichlet", "voxel-hole": "dirichlet"}
NOMINAL_RX = 8.0


@dataclass(frozen=True)
class ScenarioSpec:
    """Part family, defect size, noise and spectrum settings.

    ``delta`` is the barrel amplitude, ``rx`` the voxel hole semi-axis.
    Stream items before ``onset`` (1-based) are in control.
    """

    family: str = "barrel"
    delta: float = 0.0
    rx: float = NOMINAL_RX
    max_noise: Optional[int] = None
    noise: NoiseModel = field(default_factory=lambda: NoiseModel("isotropic"))
    order: str = "linear"
    bc: Optional[str] = None
    k: int = 15
    vertices: int = 2562
    hole_cap: Optional[float] = None
    onset: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.family == "voxel-hole" and not 0 < self.rx < 10:
            raise ValueError("rx must lie in (0, 10)")
        if self.max_noise is not None and self.max_noise < 1:
            raise ValueError("max_noise must be >= 1")
        if self.onset < 1:
            raise ValueError("onset must be >= 1")

    @property
    def config(self) -> SpectrumConfig:
        return SpectrumConfig(self.order, self.bc or _DEFAULT_BC[self.family], self.k)

    @property
    def name(self) -> str:
        if self.family == "voxel-hole":
            tag = f"voxel-hole_rx{self.rx:g}_noise{self.max_noise or 0}"
        elif self.family == "sphere":
            tag = f"sphere_n{self.vertices}"
        else:
            tag = f"{self.family}_delta{self.delta:g}"
        return f"{tag}_{self.order}"

    def in_control(self) -> "ScenarioSpec":
        return replace(self, delta=0.0, rx=NOMINAL_RX)

    def make_part(self, rng):
        if self.family == "sphere":
            mesh = gen_sphere_mesh(self.vertices, self.noise, rng)
            return gen_open_variant(mesh, polar_cap(self.hole_cap)) if self.hole_cap else mesh
        if self.family in ("barrel", "open-barrel"):
            return gen_barrel_cylinder(
                self.delta, noise=self.noise, seed=rng, open_bottom=self.family == "open-barrel"
            )
        return gen_voxel_part(self.rx, self.max_noise, rng)

    def spectrum(self, rng) -> np.ndarray:
        return compute_spectrum(self.make_part(rng), self.config).eigenvalues


class GeneratedScenario:
    """Parts generated and solved on demand inside each replication."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.ic = spec.in_control()
        self.name = spec.name

    def phase1(self, rng, m0: int) -> np.ndarray:
        return np.array([self.ic.spectrum(rng) for _ in range(m0)])

    def phase2(self, rng) -> Iterator[np.ndarray]:
        n = 0
        while True:
            n += 1
            yield (self.spec if n >= self.spec.onset else self.ic).spectrum(rng)


def _bank_item(args):
    spec, seed, tag, i = args
    return spec.spectrum(np.random.default_rng([seed, tag, i]))


def build_bank(spec: ScenarioSpec, size: int, seed: int = 0, tag: int = 0, workers: int = 1) -> np.ndarray:
    """``size`` spectra of independent parts; item ``i`` uses ``default_rng([seed, tag, i])``."""
    jobs = [(spec, seed, tag, i) for i in range(size)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return np.array(list(ex.map(_bank_item, jobs, chunksize=max(1, size // (4 * workers)))))
    return np.array([_bank_item(j) for j in jobs])


class _Pool:
    def __init__(self, bank: np.ndarray, rng):
        self.bank, self.rng = bank, rng
        self.order, self.pos = rng.permutation(len(bank)), 0

    def take(self) -> np.ndarray:
        if self.pos == len(self.order):
            # exhausted: start a fresh permutation (parts may now repeat)
            self.order, self.pos = self.rng.permutation(len(self.bank)), 0
        self.pos += 1
        return self.bank[self.order[self.pos - 1]]


@dataclass
class BankScenario:
    """Scenario drawing from precomputed in-control and defective spectrum pools.

    With ``oc_bank=None`` the stream continues through the in-control pool,
    which models an in-control process.
    """

    name: str
    ic_bank: np.ndarray
    oc_bank: Optional[np.ndarray] = None
    onset: int = 1
    _ic: Optional[_Pool] = field(default=None, repr=False)

    def phase1(self, rng, m0: int) -> np.ndarray:
        if m0 > len(self.ic_bank):
            raise ValueError(f"in-control bank has {len(self.ic_bank)} spectra, need m0={m0}")
        self._ic = _Pool(self.ic_bank, rng)
        return np.array([self._ic.take() for _ in range(m0)])

    def phase2(self, rng) -> Iterator[np.ndarray]:
        ic = self._ic if self._ic is not None else _Pool(self.ic_bank, rng)
        oc = _Pool(self.oc_bank, rng) if self.oc_bank is not None else ic
        n = 0
        while True:
            n += 1
            yield (oc if n >= self.onset else ic).take()


def bank_scenario(spec: ScenarioSpec, ic_size: int, oc_size: int = 0, seed: int = 0,
                  workers: int = 1, ic_bank: Optional[np.ndarray] = None) -> BankScenario:
    """Precompute pools for ``spec``; an in-control spec needs no defective pool."""
    ic_spec = spec.in_control()
    if ic_bank is None:
        ic_bank = build_bank(ic_spec, ic_size, seed, 0, workers)
    oc_bank = None
    if spec != ic_spec:
        if oc_size < 1:
            raise ValueError("a defective scenario needs oc_size >= 1")
        oc_bank = build_bank(spec, oc_size, seed, 1, workers)
    return BankScenario(spec.name, ic_bank, oc_bank, spec.onset)
