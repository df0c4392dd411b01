"""Synthetic instance generation.

Two generators:

* ``upsample`` grows a real base instance to a sampled size, preserving
  its granted-edge density (within rounding) and its dynamic-to-granted
  edge ratio.  New nodes are resampled base nodes with noise-perturbed
  embeddings; granted edges are drawn without replacement, weighted by
  user-to-datastore embedding distance (or similarity, if configured).

* ``planted`` builds role-structured instances with known ground truth:
  users in a role share that role's datastores plus a common pool, and
  granted-but-unused extras point into other roles' datastores, so the
  dormancy a grouping can shed (and the role recovery an embedding
  clustering should achieve) is known by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .embeddings import EmbeddingTable, build_table
from .model import AccessInstance, build_instance

log = logging.getLogger("iamax.synth")


@dataclass(frozen=True)
class UpsampleConfig:
    user_range: tuple[int, int] = (10, 150)
    store_range: tuple[int, int] = (50, 300)
    noise_sigma: float = 0.01
    weight_mode: str = "distance"  # or "similarity"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.user_range[0] < 1 or self.user_range[0] > self.user_range[1]:
            raise ValueError("bad user_range")
        if self.store_range[0] < 1 or self.store_range[0] > self.store_range[1]:
            raise ValueError("bad store_range")
        if self.weight_mode not in ("distance", "similarity"):
            raise ValueError("weight_mode must be 'distance' or 'similarity'")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def _noisy_unit(vec: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    for _ in range(16):
        v = vec + rng.normal(0.0, sigma, size=vec.shape)
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            return v / norm
    raise RuntimeError("could not draw a normalizable noisy vector")


def upsample(
    base: AccessInstance, base_emb: EmbeddingTable, cfg: UpsampleConfig
) -> tuple[AccessInstance, EmbeddingTable]:
    """Generate one scaled-up instance and its embedding table."""
    rng = np.random.default_rng(cfg.seed)
    if base.ud_hat.sum() == 0:
        raise ValueError("base instance has no granted edges")
    missing = [
        i for i in list(base.users) + list(base.datastores) if i not in base_emb.vectors
    ]
    if missing:
        raise ValueError(f"base embedding table lacks nodes: {missing[:10]}")

    nu = int(rng.integers(cfg.user_range[0], cfg.user_range[1] + 1))
    nd = int(rng.integers(cfg.store_range[0], cfg.store_range[1] + 1))
    user_src = rng.integers(0, base.n_users, size=nu)
    store_src = rng.integers(0, base.n_datastores, size=nd)
    users = [f"u{i:04d}" for i in range(nu)]
    stores = [f"d{j:04d}" for j in range(nd)]

    entries: dict[str, tuple[str, np.ndarray]] = {}
    umat = np.empty((nu, base_emb.dim))
    dmat = np.empty((nd, base_emb.dim))
    for i, u in enumerate(users):
        src = base.users[int(user_src[i])]
        umat[i] = _noisy_unit(base_emb.vectors[src], cfg.noise_sigma, rng)
        entries[u] = ("user", umat[i])
    for j, d in enumerate(stores):
        src = base.datastores[int(store_src[j])]
        dmat[j] = _noisy_unit(base_emb.vectors[src], cfg.noise_sigma, rng)
        entries[d] = ("datastore", dmat[j])

    density = float(base.ud_hat.sum()) / (base.n_users * base.n_datastores)
    n_edges = int(round(density * nu * nd))
    n_edges = max(1, min(n_edges, nu * nd))

    sim = umat @ dmat.T
    if cfg.weight_mode == "distance":
        w = np.clip(1.0 - sim, 0.0, None)
    else:
        w = np.clip(1.0 + sim, 0.0, None)
    w = w.ravel()
    total = w.sum()
    if total <= 1e-12:
        p = np.full(w.shape, 1.0 / w.size)
    else:
        p = w / total
    flat = rng.choice(nu * nd, size=n_edges, replace=False, p=p)
    perm_pairs = [(int(f) // nd, int(f) % nd) for f in flat]

    dyn_ratio = float(base.ud.sum()) / float(base.ud_hat.sum())
    n_dyn = int(round(dyn_ratio * n_edges))
    n_dyn = min(n_dyn, n_edges)
    dyn_sel = rng.choice(n_edges, size=n_dyn, replace=False) if n_dyn else []
    count_pool = sorted(base.access_counts.values()) or [1]

    datastores = [
        {
            "id": stores[j],
            "data_types": [
                t
                for t in base.data_types
                if base.dt[int(store_src[j]), base.type_index[t]]
            ],
        }
        for j in range(nd)
    ]
    direct = [[users[i], stores[j]] for i, j in perm_pairs]
    accesses = []
    for sel in sorted(int(x) for x in dyn_sel):
        i, j = perm_pairs[sel]
        c = int(count_pool[int(rng.integers(len(count_pool)))])
        accesses.append([users[i], stores[j], c])

    inst = build_instance(users, datastores, [], direct, accesses)
    table = build_table(base_emb.dim, entries)
    return inst, table


def upsample_batch(
    base: AccessInstance, base_emb: EmbeddingTable, count: int, cfg: UpsampleConfig
) -> list[tuple[AccessInstance, EmbeddingTable]]:
    """Generate ``count`` instances with independent child seeds."""
    child_seeds = np.random.SeedSequence(cfg.seed).generate_state(count)
    out = []
    for i in range(count):
        out.append(upsample(base, base_emb, replace(cfg, seed=int(child_seeds[i]))))
    return out


@dataclass(frozen=True)
class PlantedConfig:
    num_roles: int = 4
    users_per_role: int = 10
    stores_per_role: int = 10
    shared_stores: int = 0
    dormancy_factor: float = 2.0
    embed_dim: int = 50
    noise_sigma: float = 0.01
    role_types: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_roles < 1 or self.users_per_role < 1 or self.stores_per_role < 1:
            raise ValueError("role/user/store counts must be >= 1")
        if self.shared_stores < 0:
            raise ValueError("shared_stores must be >= 0")
        if self.dormancy_factor < 1.0:
            raise ValueError("dormancy_factor must be >= 1.0")
        if self.embed_dim < self.num_roles:
            raise ValueError("embed_dim must be >= num_roles")


@dataclass(frozen=True)
class PlantedTruth:
    role_of: dict[str, int]
    role_stores: tuple[tuple[str, ...], ...]
    shared: tuple[str, ...]


def planted(cfg: PlantedConfig) -> tuple[AccessInstance, EmbeddingTable, PlantedTruth]:
    """Generate a role-structured instance with known ground truth."""
    rng = np.random.default_rng(cfg.seed)
    R = cfg.num_roles
    role_stores = [
        tuple(f"d{r:02d}-{j:02d}" for j in range(cfg.stores_per_role)) for r in range(R)
    ]
    shared = tuple(f"dzz-shared-{j:02d}" for j in range(cfg.shared_stores))
    users = [f"u{r:02d}-{i:02d}" for r in range(R) for i in range(cfg.users_per_role)]
    role_of = {u: int(u[1:3]) for u in users}

    datastores = []
    for r in range(R):
        for d in role_stores[r]:
            tags = [f"type{r:02d}"] if cfg.role_types else []
            datastores.append({"id": d, "data_types": tags})
    for d in shared:
        tags = ["typeshared"] if cfg.role_types else []
        datastores.append({"id": d, "data_types": tags})

    direct: list[list[str]] = []
    accesses: list[list] = []
    for u in users:
        r = role_of[u]
        need = list(role_stores[r]) + list(shared)
        extras_pool = [d for rr in range(R) if rr != r for d in role_stores[rr]]
        n_extra = int(round((cfg.dormancy_factor - 1.0) * len(need)))
        n_extra = min(n_extra, len(extras_pool))
        extras = (
            [extras_pool[int(x)] for x in rng.choice(len(extras_pool), size=n_extra, replace=False)]
            if n_extra
            else []
        )
        for d in need:
            direct.append([u, d])
            accesses.append([u, d, int(rng.integers(1, 6))])
        for d in extras:
            direct.append([u, d])

    entries: dict[str, tuple[str, np.ndarray]] = {}
    for u in users:
        base_vec = np.zeros(cfg.embed_dim)
        base_vec[role_of[u]] = 1.0
        entries[u] = ("user", _noisy_unit(base_vec, cfg.noise_sigma, rng))
    for r in range(R):
        for d in role_stores[r]:
            base_vec = np.zeros(cfg.embed_dim)
            base_vec[r] = 1.0
            entries[d] = ("datastore", _noisy_unit(base_vec, cfg.noise_sigma, rng))
    for d in shared:
        base_vec = np.zeros(cfg.embed_dim)
        base_vec[:R] = 1.0 / np.sqrt(R)
        entries[d] = ("datastore", _noisy_unit(base_vec, cfg.noise_sigma, rng))

    inst = build_instance(users, datastores, [], direct, accesses)
    table = build_table(cfg.embed_dim, entries)
    truth = PlantedTruth(
        role_of=role_of,
        role_stores=tuple(role_stores),
        shared=shared,
    )
    return inst, table, truth
