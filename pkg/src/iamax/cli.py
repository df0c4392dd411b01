"""Command-line interface.

Subcommands::

    optimize      synthesize a hardened policy for one instance
    sweep-groups  dormancy vs. group budget across a grid
    attack        impact ratios before/after hardening
    synth         generate synthetic instances (upsample or planted)
    cluster       cluster user embeddings, pick k, derive alpha
    ubg           export the behavioral graph for an instance

Every run writes a ``manifest.json`` into the output directory with the
command line, seed, SHA-256 of each input, and the produced files, so a
run can be reproduced byte-for-byte (timing fields aside).  Exit codes:
0 success, 2 invalid input, 3 proven infeasible, 4 gave up without a
solution, 5 I/O failure.  Failures also emit a JSON error object on
stdout.  Set ``IAMAX_LOG`` to a level name for diagnostics.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attack import evaluate_hardening, hardening_rows_to_csv
from .charts import bar_chart, line_chart, save_svg
from .embeddings import (
    EmbeddingError,
    compute_alpha,
    kmeans,
    load_embeddings,
    save_embeddings,
    select_k,
)
from .homogeneity import SimilarityModel, generate
from .model import (
    InstanceError,
    load_instance,
    load_policy,
    save_instance,
    save_policy,
)
from .optimizer import (
    STATUS_FEASIBLE,
    STATUS_INFEASIBLE,
    STATUS_TIMEOUT,
    PenaltyConfig,
    SolveConfig,
    solve,
    sweep_groups,
)
from .synth import PlantedConfig, UpsampleConfig, planted, upsample_batch
from .ubg import GraphError, build_graph, load_graph, save_graph

log = logging.getLogger("iamax.cli")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_TIMEOUT = 4
EXIT_IO = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _parse_time_limit(text: str) -> float:
    m = re.fullmatch(r"\s*([0-9]+(?:\.[0-9]*)?)\s*([smh]?)\s*", text)
    if not m:
        raise CliError(EXIT_VALIDATION, f"cannot parse time limit {text!r} (use 900, 900s, 15m, 1h)")
    value = float(m.group(1))
    value *= {"": 1.0, "s": 1.0, "m": 60.0, "h": 3600.0}[m.group(2)]
    if value <= 0:
        raise CliError(EXIT_VALIDATION, "time limit must be positive")
    return value


def _parse_grid(text: str) -> list[int]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliError(EXIT_VALIDATION, f"grid range must be start:stop:step, got {text!r}")
        start, stop, step = (int(p) for p in parts)
        if step <= 0 or start < 1 or stop < start:
            raise CliError(EXIT_VALIDATION, f"bad grid range {text!r}")
        return list(range(start, stop + 1, step))
    try:
        vals = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise CliError(EXIT_VALIDATION, f"cannot parse grid {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise CliError(EXIT_VALIDATION, f"grid values must be >= 1: {text!r}")
    return vals


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise CliError(EXIT_VALIDATION, f"cannot parse k list {text!r}") from None
    if not ks or any(k < 1 for k in ks):
        raise CliError(EXIT_VALIDATION, "k values must be >= 1")
    return ks


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_IO, f"input file not found: {path}")
    return p


def _out_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create output directory {path}: {exc}") from exc
    return p


def _write_manifest(
    out_dir: Path,
    command: str,
    argv: list[str],
    seed: int,
    inputs: list[Path],
    outputs: list[str],
    wall_time: float,
) -> None:
    manifest = {
        "command": command,
        "argv": argv,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(outputs),
        "wall_time": wall_time,
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_exclusions(args) -> tuple[tuple[str, str], ...]:
    pairs = []
    for spec in args.exclude or []:
        bits = spec.split(",")
        if len(bits) != 2 or not bits[0] or not bits[1]:
            raise CliError(EXIT_VALIDATION, f"--exclude takes 'user1,user2', got {spec!r}")
        pairs.append((bits[0], bits[1]))
    return tuple(pairs)


def _similarity_model(inst, args) -> SimilarityModel | None:
    if not args.embeddings:
        return None
    table = load_embeddings(_require_file(args.embeddings))
    sel = select_k(table, args.k_min, args.k_max, seed=args.seed)
    clustering = sel.clustering
    if args.alpha == "auto":
        alpha = None
    else:
        try:
            alpha = float(args.alpha)
        except ValueError:
            raise CliError(EXIT_VALIDATION, f"--alpha must be 'auto' or a number, got {args.alpha!r}") from None
        if alpha < 0:
            raise CliError(EXIT_VALIDATION, "--alpha must be >= 0")
    return SimilarityModel.build(inst, table, clustering, alpha=alpha)


def cmd_optimize(args) -> int:
    t0 = time.monotonic()
    inst_path = _require_file(args.instance)
    inst = load_instance(inst_path)
    out = _out_dir(args.out_dir)
    excl = _load_exclusions(args)
    scfg = SolveConfig(
        num_groups=args.groups,
        time_limit=_parse_time_limit(args.time_limit),
        seed=args.seed,
        restarts=args.restarts,
        pair_exclusions=excl,
    )
    pcfg = PenaltyConfig(
        epsilon=args.epsilon, gamma=args.gamma, clamp_penalty_at_zero=args.clamp_penalty
    )
    inputs = [inst_path]
    outputs: list[str] = []
    sm = _similarity_model(inst, args)
    if sm is not None:
        inputs.append(Path(args.embeddings))
        gen = generate(inst, scfg, pcfg, sm, batch_size=args.batch_size)
        res = gen.result
        gen.trace.to_csv(out / "trace.csv")
        outputs.append("trace.csv")
    else:
        res = solve(inst, scfg, pcfg)

    (out / "result.json").write_text(
        json.dumps(res.to_json_obj(inst), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    outputs.append("result.json")
    if res.status == STATUS_FEASIBLE:
        save_policy(inst, res.policy, out / "policy.json", out / "memberships.json")
        outputs += ["policy.json", "memberships.json"]
        if res.incumbent_history:
            svg = line_chart(
                [("objective", [(t, o) for t, o in res.incumbent_history])],
                title="Incumbent objective over time",
                xlabel="seconds",
                ylabel="objective",
                y_zero=False,
            )
            save_svg(svg, out / "convergence.svg")
            outputs.append("convergence.svg")
    _write_manifest(out, "optimize", sys.argv[1:], args.seed, inputs, outputs, time.monotonic() - t0)
    print(json.dumps({
        "status": res.status,
        "objective": res.objective,
        "dormant_remaining": res.dormant_remaining,
        "dormant_baseline": res.dormant_baseline,
    }))
    if res.status == STATUS_INFEASIBLE:
        return EXIT_INFEASIBLE
    if res.status == STATUS_TIMEOUT:
        return EXIT_TIMEOUT
    return EXIT_OK


def cmd_sweep_groups(args) -> int:
    t0 = time.monotonic()
    inst_path = _require_file(args.instance)
    inst = load_instance(inst_path)
    out = _out_dir(args.out_dir)
    grid = _parse_grid(args.grid)
    scfg = SolveConfig(
        num_groups=grid[0],
        time_limit=_parse_time_limit(args.time_limit),
        seed=args.seed,
        restarts=args.restarts,
        pair_exclusions=_load_exclusions(args),
    )
    pcfg = PenaltyConfig(
        epsilon=args.epsilon, gamma=args.gamma, clamp_penalty_at_zero=args.clamp_penalty
    )
    points = sweep_groups(inst, grid, scfg, pcfg)
    import csv as _csv

    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["num_groups", "status", "objective", "dormant_remaining", "dormant_pct", "wall_time"])
        for p in points:
            w.writerow([
                p.num_groups,
                p.status,
                "" if p.objective is None else repr(p.objective),
                "" if p.dormant_remaining is None else p.dormant_remaining,
                "" if p.dormant_pct is None else f"{p.dormant_pct:.4f}",
                f"{p.wall_time:.3f}",
            ])
    feas = [(p.num_groups, p.dormant_pct) for p in points if p.dormant_pct is not None]
    outputs = ["sweep.csv"]
    if feas:
        svg = line_chart(
            [("dormant %", feas)],
            title="Remaining dormancy vs. group budget",
            xlabel="groups",
            ylabel="dormant permissions (%)",
        )
        save_svg(svg, out / "sweep.svg")
        outputs.append("sweep.svg")
    _write_manifest(out, "sweep-groups", sys.argv[1:], args.seed, [inst_path], outputs, time.monotonic() - t0)
    print(json.dumps({"points": len(points), "feasible": len(feas)}))
    return EXIT_OK if feas else EXIT_TIMEOUT


def cmd_attack(args) -> int:
    t0 = time.monotonic()
    inst_path = _require_file(args.instance)
    inst = load_instance(inst_path)
    out = _out_dir(args.out_dir)
    inputs = [inst_path]
    if bool(args.policy) != bool(args.memberships):
        raise CliError(EXIT_VALIDATION, "--policy and --memberships go together")
    if args.policy:
        ppath = _require_file(args.policy)
        mpath = _require_file(args.memberships)
        inputs += [ppath, mpath]
        pol = load_policy(inst, ppath, mpath)
    else:
        # no policy: compare the grants against themselves (ratio 1.0)
        ug = np.ones((inst.n_users, 1), dtype=bool)
        dad = np.ones((1, inst.n_datastores), dtype=bool)
        from .model import GeneratedPolicy

        pol = GeneratedPolicy(num_groups=1, ug=ug, dad=dad)
    ks = _parse_ks(args.k)
    modes = ["random", "worst"] if args.mode == "both" else [args.mode]
    rows = []
    for mode in modes:
        rows += evaluate_hardening(
            inst, pol, ks, mode, samples=args.samples, seed=args.seed,
            filter_fraction=args.filter_fraction,
        )
    hardening_rows_to_csv(rows, out / "ratios.csv")
    outputs = ["ratios.csv"]
    cats = [str(k) for k in ks]
    series = []
    for mode in modes:
        series.append(
            (mode, [next(r.ratio for r in rows if r.mode == mode and r.k == k) for k in ks])
        )
    svg = bar_chart(
        cats, series,
        title="Attack impact ratio (hardened / baseline)",
        xlabel="compromised credentials (k)",
        ylabel="ratio",
    )
    save_svg(svg, out / "ratios.svg")
    outputs.append("ratios.svg")
    _write_manifest(out, "attack", sys.argv[1:], args.seed, inputs, outputs, time.monotonic() - t0)
    print(json.dumps({"rows": [
        {"k": r.k, "mode": r.mode, "baseline": r.baseline_impact,
         "hardened": r.hardened_impact, "ratio": r.ratio} for r in rows
    ]}))
    return EXIT_OK


def cmd_synth(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args.out_dir)
    outputs: list[str] = []
    inputs: list[Path] = []
    if args.mode == "upsample":
        if not args.base or not args.embeddings:
            raise CliError(EXIT_VALIDATION, "upsample mode needs --base and --embeddings")
        base_path = _require_file(args.base)
        emb_path = _require_file(args.embeddings)
        inputs = [base_path, emb_path]
        base = load_instance(base_path)
        emb = load_embeddings(emb_path)
        cfg = UpsampleConfig(
            user_range=(args.min_users, args.max_users),
            store_range=(args.min_stores, args.max_stores),
            noise_sigma=args.noise_sigma,
            weight_mode=args.weight_mode,
            seed=args.seed,
        )
        for i, (inst, table) in enumerate(upsample_batch(base, emb, args.count, cfg)):
            save_instance(inst, out / f"inst-{i:04d}.json")
            save_embeddings(table, out / f"emb-{i:04d}.json")
            outputs += [f"inst-{i:04d}.json", f"emb-{i:04d}.json"]
    else:
        cfg = PlantedConfig(
            num_roles=args.roles,
            users_per_role=args.users_per_role,
            stores_per_role=args.stores_per_role,
            shared_stores=args.shared_stores,
            dormancy_factor=args.dormancy_factor,
            embed_dim=args.dim,
            noise_sigma=args.noise_sigma,
            role_types=args.role_types,
            seed=args.seed,
        )
        seeds = np.random.SeedSequence(args.seed).generate_state(args.count)
        from dataclasses import replace as _replace

        for i in range(args.count):
            inst, table, truth = planted(_replace(cfg, seed=int(seeds[i])))
            save_instance(inst, out / f"inst-{i:04d}.json")
            save_embeddings(table, out / f"emb-{i:04d}.json")
            (out / f"truth-{i:04d}.json").write_text(
                json.dumps(
                    {
                        "role_of": truth.role_of,
                        "role_stores": [list(x) for x in truth.role_stores],
                        "shared": list(truth.shared),
                    },
                    indent=2,
                    sort_keys=True,
                )
                + "\n",
                encoding="utf-8",
            )
            outputs += [f"inst-{i:04d}.json", f"emb-{i:04d}.json", f"truth-{i:04d}.json"]
    _write_manifest(out, "synth", sys.argv[1:], args.seed, inputs, outputs, time.monotonic() - t0)
    print(json.dumps({"generated": args.count}))
    return EXIT_OK


def cmd_cluster(args) -> int:
    t0 = time.monotonic()
    emb_path = _require_file(args.embeddings)
    table = load_embeddings(emb_path)
    out = _out_dir(args.out_dir)
    if args.k == "auto":
        sel = select_k(table, args.k_min, args.k_max, seed=args.seed)
        clustering = sel.clustering
        curve = list(zip(sel.ks, sel.sses))
    else:
        try:
            k = int(args.k)
        except ValueError:
            raise CliError(EXIT_VALIDATION, f"--k must be 'auto' or an integer, got {args.k!r}") from None
        clustering = kmeans(table, k, seed=args.seed)
        curve = [(k, clustering.sse)]
    alpha = compute_alpha(table, clustering)
    obj = {
        "k": clustering.k,
        "alpha": alpha,
        "sse": clustering.sse,
        "assignment": clustering.assignment,
        "curve": [[k, s] for k, s in curve],
    }
    (out / "clusters.json").write_text(
        json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    outputs = ["clusters.json"]
    if len(curve) > 1:
        svg = line_chart(
            [("sse", [(float(k), s) for k, s in curve])],
            title="Clustering error vs. k",
            xlabel="k",
            ylabel="sse",
        )
        save_svg(svg, out / "elbow.svg")
        outputs.append("elbow.svg")
    _write_manifest(out, "cluster", sys.argv[1:], args.seed, [emb_path], outputs, time.monotonic() - t0)
    print(json.dumps({"k": clustering.k, "alpha": alpha}))
    return EXIT_OK


def cmd_ubg(args) -> int:
    t0 = time.monotonic()
    inst_path = _require_file(args.instance)
    inst = load_instance(inst_path)
    out = _out_dir(args.out_dir)
    inputs = [inst_path]
    events = None
    if args.events:
        ev_path = _require_file(args.events)
        inputs.append(ev_path)
        from .ubg import Event

        with open(ev_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        events = [
            Event(actor=e["actor"], target=e["target"], op_class=e["op_class"], count=int(e["count"]))
            for e in raw
        ]
    graph = build_graph(inst, events)
    save_graph(graph, out / "ubg.json")
    _write_manifest(out, "ubg", sys.argv[1:], args.seed, inputs, ["ubg.json"], time.monotonic() - t0)
    print(json.dumps({
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "components": graph.num_components,
    }))
    return EXIT_OK


def _add_common_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--time-limit", default="900s", help="e.g. 900, 900s, 15m (default 900s)")
    p.add_argument("--epsilon", type=float, default=0.15, help="over-grant slack tolerance")
    p.add_argument("--gamma", type=float, default=2.0, help="over-grant penalty slope")
    p.add_argument("--clamp-penalty", action="store_true", help="clamp per-user penalty at zero")
    p.add_argument("--restarts", type=int, default=24)
    p.add_argument("--exclude", action="append", metavar="U1,U2", help="forbid a user pair from sharing any group (repeatable)")
    p.add_argument("--threads", type=int, default=1, help="accepted for compatibility; the search is single-threaded")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iamax", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="synthesize a hardened policy")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("-g", "--groups", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out-dir", required=True)
    _add_common_solver_flags(p)
    p.add_argument("--embeddings", help="embedding table; enables homogeneity cuts")
    p.add_argument("--alpha", default="auto", help="similarity threshold, or 'auto'")
    p.add_argument("--batch-size", type=int, default=50, help="cuts added per round")
    p.add_argument("--k-min", type=int, default=5)
    p.add_argument("--k-max", type=int, default=25)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sweep-groups", help="dormancy vs. group budget")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("--grid", default="1,5:100:5", help="'a,b,c' or start:stop:step (default 1 plus 5..100 by 5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out-dir", required=True)
    _add_common_solver_flags(p)
    p.set_defaults(func=cmd_sweep_groups)

    p = sub.add_parser("attack", help="impact ratios before/after hardening")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("--policy", help="policy.json from optimize")
    p.add_argument("--memberships", help="memberships.json from optimize")
    p.add_argument("--k", default="1,2,3", help="attack sizes, comma separated")
    p.add_argument("--mode", choices=["random", "worst", "both"], default="both")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--filter-fraction", type=float, default=0.3, help="top-degree users removed in worst mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out-dir", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("synth", help="generate synthetic instances")
    p.add_argument("--mode", choices=["upsample", "planted"], default="upsample")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out-dir", required=True)
    p.add_argument("--base", help="base instance (upsample)")
    p.add_argument("--embeddings", help="base embeddings (upsample)")
    p.add_argument("--min-users", type=int, default=10)
    p.add_argument("--max-users", type=int, default=150)
    p.add_argument("--min-stores", type=int, default=50)
    p.add_argument("--max-stores", type=int, default=300)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--weight-mode", choices=["distance", "similarity"], default="distance")
    p.add_argument("--roles", type=int, default=4)
    p.add_argument("--users-per-role", type=int, default=10)
    p.add_argument("--stores-per-role", type=int, default=10)
    p.add_argument("--shared-stores", type=int, default=0)
    p.add_argument("--dormancy-factor", type=float, default=2.0)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--role-types", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="cluster embeddings, pick k, derive alpha")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", default="auto")
    p.add_argument("--k-min", type=int, default=5)
    p.add_argument("--k-max", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out-dir", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("ubg", help="export the behavioral graph")
    p.add_argument("-i", "--instance", required=True)
    p.add_argument("--events", help="JSON list of {actor, target, op_class, count}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out-dir", required=True)
    p.set_defaults(func=cmd_ubg)
    return ap


def _emit_error(code: int, exc_type: str, message: str) -> None:
    print(json.dumps({"error": {"code": code, "type": exc_type, "message": message}}))


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("IAMAX_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _emit_error(exc.code, "CliError", str(exc))
        return exc.code
    except (InstanceError, EmbeddingError, GraphError, ValueError) as exc:
        _emit_error(EXIT_VALIDATION, type(exc).__name__, str(exc))
        return EXIT_VALIDATION
    except json.JSONDecodeError as exc:
        _emit_error(EXIT_VALIDATION, "JSONDecodeError", str(exc))
        return EXIT_VALIDATION
    except OSError as exc:
        _emit_error(EXIT_IO, type(exc).__name__, str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
