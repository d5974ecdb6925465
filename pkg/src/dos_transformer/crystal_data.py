"""Crystal-graph data model, JSONL ingestion, featurization, splits and the
synthetic dataset generator."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .spectrum import EnergyGrid

log = logging.getLogger(__name__)

CRYSTAL_SYSTEMS = (
    "cubic", "hexagonal", "tetragonal", "trigonal",
    "orthorhombic", "monoclinic", "triclinic",
)
SPECIES_TRAIN = frozenset({2, 3})
SPECIES_HELDOUT = frozenset({1, 4, 5})
SYSTEM_TRAIN = frozenset({"cubic", "hexagonal", "tetragonal", "trigonal", "orthorhombic"})
SYSTEM_HELDOUT = frozenset({"monoclinic", "triclinic"})
SPLIT_STRATEGIES = ("random", "by_species_count", "by_crystal_system")


class DataValidationError(ValueError):
    """Raised when an input file or crystal violates the data contract."""


@dataclass(frozen=True)
class FeaturizerConfig:
    """Default featurization: one-hot atoms, Gaussian radial basis on bond length."""

    num_species: int = 4
    rbf_centers: int = 16
    rbf_min: float = 0.0
    rbf_max: float = 5.0
    rbf_width: float = 0.5

    def to_dict(self) -> dict:
        return {
            "num_species": self.num_species, "rbf_centers": self.rbf_centers,
            "rbf_min": self.rbf_min, "rbf_max": self.rbf_max, "rbf_width": self.rbf_width,
        }


def featurize(species: int, config: FeaturizerConfig) -> np.ndarray:
    if not 0 <= species < config.num_species:
        raise DataValidationError(
            f"species index {species} out of range for num_species={config.num_species}")
    out = np.zeros(config.num_species)
    out[species] = 1.0
    return out


def expand_bond_lengths(lengths, config: FeaturizerConfig) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.float64).reshape(-1, 1)
    centers = np.linspace(config.rbf_min, config.rbf_max, config.rbf_centers)
    return np.exp(-((lengths - centers[None, :]) ** 2) / (2.0 * config.rbf_width ** 2))


@dataclass(frozen=True, eq=False)
class CrystalGraph:
    id: str
    atom_species: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    n_species_kinds: int
    crystal_system: str | None = None
    is_magnetic: bool = False
    dos: np.ndarray | None = None
    atom_features: np.ndarray | None = None
    bond_lengths: np.ndarray | None = None
    edge_features: np.ndarray | None = None
    fermi_target: float | None = None

    @property
    def n_atoms(self) -> int:
        return len(self.atom_species)

    def node_features(self, config: FeaturizerConfig) -> np.ndarray:
        if self.atom_features is not None:
            return self.atom_features
        return np.stack([featurize(s, config) for s in self.atom_species])

    def edge_feature_matrix(self, config: FeaturizerConfig) -> np.ndarray:
        if self.edge_features is not None:
            return self.edge_features
        if self.bond_lengths is not None:
            return expand_bond_lengths(self.bond_lengths, config)
        return np.zeros((0, config.rbf_centers))

    def validate(self, m: int | None = None) -> None:
        n = self.n_atoms
        if n < 1:
            raise DataValidationError(f"crystal {self.id}: no atoms")
        edge_set = set()
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise DataValidationError(
                    f"crystal {self.id}: edge ({i}, {j}) out of range for {n} atoms")
            edge_set.add((i, j))
        missing = [(i, j) for i, j in edge_set if (j, i) not in edge_set]
        if missing:
            raise DataValidationError(
                f"crystal {self.id}: edge {missing[0]} has no reverse edge")
        if self.n_species_kinds != len(set(self.atom_species)):
            raise DataValidationError(
                f"crystal {self.id}: n_species_kinds={self.n_species_kinds} but "
                f"{len(set(self.atom_species))} distinct species")
        if self.crystal_system is not None and self.crystal_system not in CRYSTAL_SYSTEMS:
            raise DataValidationError(
                f"crystal {self.id}: unknown crystal_system {self.crystal_system!r}")
        if self.atom_features is not None and self.atom_features.shape[0] != n:
            raise DataValidationError(f"crystal {self.id}: atom_features rows != {n}")
        n_e = len(self.edges)
        for name, arr in (("bond_lengths", self.bond_lengths), ("edge_features", self.edge_features)):
            if arr is not None and arr.shape[0] != n_e:
                raise DataValidationError(f"crystal {self.id}: {name} rows != {n_e} edges")
        if n_e and self.bond_lengths is None and self.edge_features is None:
            raise DataValidationError(
                f"crystal {self.id}: edges given without bond_lengths or edge_features")
        if self.dos is not None and m is not None and len(self.dos) != m:
            raise DataValidationError(
                f"crystal {self.id}: dos length {len(self.dos)} ≠ {m}")

    def to_json(self) -> dict:
        d: dict = {"id": self.id, "atom_species": list(self.atom_species)}
        if self.atom_features is not None:
            d["atom_features"] = self.atom_features.tolist()
        d["edges"] = [list(e) for e in self.edges]
        if self.bond_lengths is not None:
            d["bond_lengths"] = self.bond_lengths.tolist()
        if self.edge_features is not None:
            d["edge_features"] = self.edge_features.tolist()
        if self.dos is not None:
            d["dos"] = self.dos.tolist()
        d["n_species_kinds"] = self.n_species_kinds
        d["crystal_system"] = self.crystal_system
        d["is_magnetic"] = self.is_magnetic
        if self.fermi_target is not None:
            d["fermi_target"] = self.fermi_target
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "CrystalGraph":
        def arr(key, ndim):
            if obj.get(key) is None:
                return None
            a = np.asarray(obj[key], dtype=np.float64)
            if a.ndim != ndim and not (a.size == 0 and ndim == 2):
                raise DataValidationError(f"crystal {obj.get('id')}: {key} must be {ndim}-D")
            return a.reshape(-1, a.shape[-1] if a.size else 0) if ndim == 2 else a

        try:
            cid = str(obj["id"])
            species = tuple(int(s) for s in obj["atom_species"])
            edges = tuple((int(e[0]), int(e[1])) for e in obj.get("edges", []))
            kinds = int(obj.get("n_species_kinds", len(set(species))))
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise DataValidationError(f"bad crystal record: {exc!r}") from exc
        fermi = obj.get("fermi_target")
        return cls(
            id=cid,
            atom_species=species,
            edges=edges,
            n_species_kinds=kinds,
            crystal_system=obj.get("crystal_system"),
            is_magnetic=bool(obj.get("is_magnetic", False)),
            dos=arr("dos", 1),
            atom_features=arr("atom_features", 2),
            bond_lengths=arr("bond_lengths", 1),
            edge_features=arr("edge_features", 2),
            fermi_target=None if fermi is None else float(fermi),
        )


@dataclass(frozen=True)
class Dataset:
    crystals: list[CrystalGraph]
    grid: EnergyGrid

    def __post_init__(self):
        ids = [c.id for c in self.crystals]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise DataValidationError(f"duplicate crystal id {dup!r}")

    def __len__(self) -> int:
        return len(self.crystals)

    def __iter__(self):
        return iter(self.crystals)

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.crystals]

    def subset(self, crystals: Iterable[CrystalGraph]) -> "Dataset":
        return Dataset(list(crystals), self.grid)

    def targets(self) -> np.ndarray:
        return np.stack([c.dos for c in self.crystals])


@dataclass
class LoadReport:
    n_read: int = 0
    n_magnetic_dropped: int = 0
    warnings: list[str] = field(default_factory=list)

    def summary(self) -> str:
        return f"read {self.n_read}, dropped {self.n_magnetic_dropped} magnetic"


def load_dataset(path, grid: EnergyGrid, require_dos: bool = True,
                 report: LoadReport | None = None) -> Dataset:
    """Read a JSONL crystal file. Magnetic crystals are dropped and counted."""
    report = report if report is not None else LoadReport()
    crystals = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataValidationError(f"{path}:{lineno}: expected a JSON object")
            try:
                crystal = CrystalGraph.from_json(obj)
            except DataValidationError as exc:
                raise DataValidationError(f"{path}:{lineno}: {exc}") from exc
            if require_dos and crystal.dos is None:
                raise DataValidationError(f"crystal {crystal.id}: missing dos")
            crystal.validate(grid.m)
            report.n_read += 1
            if crystal.is_magnetic:
                report.n_magnetic_dropped += 1
                continue
            crystals.append(crystal)
    if report.n_read == 0:
        msg = f"{path}: no crystals found"
        report.warnings.append(msg)
        log.warning(msg)
    if report.n_magnetic_dropped:
        log.info("%s: dropped %d magnetic", path, report.n_magnetic_dropped)
    return Dataset(crystals, grid)


def dumps_crystal(crystal: CrystalGraph) -> str:
    return json.dumps(crystal.to_json(), separators=(",", ":"))


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        for c in dataset.crystals:
            fh.write(dumps_crystal(c) + "\n")


@dataclass(frozen=True)
class SplitSpec:
    strategy: str = "random"
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in SPLIT_STRATEGIES:
            raise ValueError(f"unknown split strategy {self.strategy!r}")
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValueError("fractions must be three positive numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions sum to {sum(self.fractions)}, not 1")


def eligible_pools(dataset: Dataset, strategy: str) -> tuple[list[CrystalGraph], list[CrystalGraph], list[CrystalGraph]]:
    """Partition crystals into (train pool, held-out pool, excluded) for an OOD strategy."""
    train, held, excluded = [], [], []
    for c in dataset.crystals:
        if strategy == "by_species_count":
            key, tr, ho = c.n_species_kinds, SPECIES_TRAIN, SPECIES_HELDOUT
        elif strategy == "by_crystal_system":
            if c.crystal_system is None:
                raise DataValidationError(f"crystal {c.id}: crystal_system missing")
            key, tr, ho = c.crystal_system, SYSTEM_TRAIN, SYSTEM_HELDOUT
        else:
            raise ValueError(f"no pools for strategy {strategy!r}")
        if key in tr:
            train.append(c)
        elif key in ho:
            held.append(c)
        else:
            excluded.append(c)
    return train, held, excluded


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic train/valid/test partition (random or one of two OOD protocols)."""
    if len(dataset) == 0:
        raise DataValidationError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    if spec.strategy == "random":
        order = rng.permutation(len(dataset))
        n = len(dataset)
        n_train = int(round(spec.fractions[0] * n))
        n_valid = int(round(spec.fractions[1] * n))
        picked = [dataset.crystals[i] for i in order]
        parts = (picked[:n_train], picked[n_train:n_train + n_valid], picked[n_train + n_valid:])
    else:
        train, held, excluded = eligible_pools(dataset, spec.strategy)
        if excluded:
            log.info("split %s: excluded %d crystals outside both pools",
                     spec.strategy, len(excluded))
        order = rng.permutation(len(held))
        held = [held[i] for i in order]
        half = len(held) // 2
        parts = (train, held[:half], held[half:])
    for name, part in zip(("train", "valid", "test"), parts):
        if not part:
            raise DataValidationError(f"split {spec.strategy}: {name} partition is empty")
    return tuple(dataset.subset(p) for p in parts)


def write_split(dataset: Dataset, spec: SplitSpec, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    parts = split(dataset, spec)
    for name, part in zip(("train", "valid", "test"), parts):
        save_dataset(part, out / f"{name}.jsonl")
    n_excluded = len(dataset) - sum(len(p) for p in parts)
    manifest = {
        "seed": spec.seed,
        "strategy": spec.strategy,
        "fractions": list(spec.fractions),
        "counts": {"train": len(parts[0]), "valid": len(parts[1]),
                   "test": len(parts[2]), "excluded": n_excluded},
        "grid": dataset.grid.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# synthetic generator ---------------------------------------------------------

SYNTH_SPECIES = 4
SYNTH_CENTERS = (-2.5, -0.8, 0.8, 2.5)  # eV, one per species
SYNTH_DEGREE_SHIFT = 0.1  # eV per bond
SYNTH_WIDTH = 0.4  # eV


def synthetic_dos(species: Sequence[int], degree: Sequence[int], energies: np.ndarray) -> np.ndarray:
    centers = np.asarray(SYNTH_CENTERS)[np.asarray(species)] + SYNTH_DEGREE_SHIFT * np.asarray(degree)
    raw = np.exp(-0.5 * ((energies[None, :] - centers[:, None]) / SYNTH_WIDTH) ** 2).sum(axis=0)
    return (raw - raw.min()) / (raw.max() - raw.min())


def half_mass_energy(dos: np.ndarray, energies: np.ndarray) -> float:
    """Grid energy where the cumulative DOS first exceeds half its total."""
    cum = np.cumsum(dos)
    return float(energies[int(np.argmax(cum > 0.5 * cum[-1]))])


def _random_connected_edges(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    bonds = {(min(i, int(rng.integers(i))), i) for i in range(1, n)}
    for _ in range(int(rng.integers(0, n))):
        i, j = rng.choice(n, size=2, replace=False)
        bonds.add((int(min(i, j)), int(max(i, j))))
    out = []
    for i, j in sorted(bonds):
        out += [(i, j), (j, i)]
    return out


def generate_synthetic(n_crystals: int, seed: int, grid: EnergyGrid) -> Dataset:
    """Desk-scale surrogate dataset whose DOS depends on composition, bonding and energy."""
    if n_crystals < 1:
        raise ValueError("n_crystals must be >= 1")
    rng = np.random.default_rng(seed)
    energies = grid.values
    crystals = []
    for k in range(n_crystals):
        n = int(rng.integers(2, 11))
        species = [int(s) for s in rng.integers(0, SYNTH_SPECIES, size=n)]
        edges = _random_connected_edges(n, rng)
        # one length per undirected bond, shared by both directions
        lengths = {}
        for i, j in edges:
            key = (min(i, j), max(i, j))
            if key not in lengths:
                lengths[key] = round(float(rng.uniform(1.0, 4.0)), 6)
        bond_lengths = np.array([lengths[(min(i, j), max(i, j))] for i, j in edges])
        degree = np.bincount([i for i, _ in edges], minlength=n)
        dos = synthetic_dos(species, degree, energies)
        crystals.append(CrystalGraph(
            id=f"synth-{seed}-{k:05d}",
            atom_species=tuple(species),
            edges=tuple(edges),
            n_species_kinds=len(set(species)),
            crystal_system=CRYSTAL_SYSTEMS[k % len(CRYSTAL_SYSTEMS)],
            is_magnetic=False,
            dos=dos,
            bond_lengths=bond_lengths,
            fermi_target=half_mass_energy(dos, energies),
        ))
    return Dataset(crystals, grid)


def metadata_replica(species_counts: dict[int, int], system_counts: dict[str, int],
                     grid: EnergyGrid) -> Dataset:
    """Structure-free dataset reproducing given family counts (for split audits).

    Species-count and crystal-system labels are paired in a fixed interleaved
    order; the two count tables must have the same total.
    """
    kinds = [k for k, c in sorted(species_counts.items()) for _ in range(c)]
    systems = [s for s in CRYSTAL_SYSTEMS for _ in range(system_counts.get(s, 0))]
    if len(kinds) != len(systems):
        raise ValueError(f"count tables disagree: {len(kinds)} vs {len(systems)} crystals")
    zeros = np.zeros(grid.m)
    crystals = [
        CrystalGraph(id=f"meta-{i:06d}", atom_species=tuple(range(k)), edges=(),
                     n_species_kinds=k, crystal_system=s, dos=zeros)
        for i, (k, s) in enumerate(zip(kinds, systems))
    ]
    return Dataset(crystals, grid)
