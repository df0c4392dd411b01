"""Dev scratch: fuzz solve() against brute_force_solve() on tiny instances."""
import sys
import time

import numpy as np

from iamax.model import build_instance
from iamax.optimizer import (
    PenaltyConfig,
    SolveConfig,
    brute_force_solve,
    solve,
    STATUS_FEASIBLE,
)


def random_instance(rng):
    nu = int(rng.integers(1, 6))
    nd = int(rng.integers(1, 6))
    while (nu + nd) * 2 > 24:
        nd -= 1
    users = [f"u{i}" for i in range(nu)]
    ntypes = int(rng.integers(0, 3))
    types = [f"t{k}" for k in range(ntypes)]
    datastores = []
    for j in range(nd):
        tags = [t for t in types if rng.random() < 0.5]
        datastores.append({"id": f"d{j}", "data_types": tags})
    ud_hat = rng.random((nu, nd)) < 0.6
    ud = ud_hat & (rng.random((nu, nd)) < 0.5)
    direct = [[users[i], datastores[j]["id"]] for i, j in zip(*np.nonzero(ud_hat))]
    accesses = [[users[i], datastores[j]["id"], int(rng.integers(1, 5))] for i, j in zip(*np.nonzero(ud))]
    return build_instance(users, datastores, [], direct, accesses)


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 300
    rng = np.random.default_rng(12345)
    t0 = time.monotonic()
    mism_obj = mism_status = 0
    for it in range(n):
        inst = random_instance(rng)
        ng = int(rng.integers(1, 3))
        eps = float(rng.choice([0.0, 0.15, 0.5]))
        gam = float(rng.choice([1.0, 2.0, 3.0]))
        clamp = bool(rng.random() < 0.3)
        excl = ()
        if inst.n_users >= 2 and rng.random() < 0.4:
            i, j = rng.choice(inst.n_users, size=2, replace=False)
            excl = ((inst.users[int(i)], inst.users[int(j)]),)
        pcfg = PenaltyConfig(epsilon=eps, gamma=gam, clamp_penalty_at_zero=clamp)
        scfg = SolveConfig(num_groups=ng, time_limit=30.0, seed=it, restarts=8,
                           pair_exclusions=excl)
        bf = brute_force_solve(inst, ng, pcfg, excl)
        sr = solve(inst, scfg, pcfg)
        feas_bf = bf.status == STATUS_FEASIBLE
        feas_sr = sr.status == STATUS_FEASIBLE
        if feas_bf != feas_sr:
            mism_status += 1
            print(f"[{it}] STATUS mismatch bf={bf.status} solve={sr.status} "
                  f"U={inst.n_users} D={inst.n_datastores} G={ng} excl={excl}")
            continue
        if feas_bf and bf.objective != sr.objective:
            mism_obj += 1
            print(f"[{it}] OBJ mismatch bf={bf.objective!r} solve={sr.objective!r} "
                  f"U={inst.n_users} D={inst.n_datastores} G={ng} eps={eps} gam={gam} clamp={clamp} excl={excl}")
            print("  bf ug:", bf.policy.ug.astype(int).tolist(), "dad:", bf.policy.dad.astype(int).tolist())
            print("  sr ug:", sr.policy.ug.astype(int).tolist(), "dad:", sr.policy.dad.astype(int).tolist())
            print("  ud:", inst.ud.astype(int).tolist())
            print("  udhat:", inst.ud_hat.astype(int).tolist())
            print("  dt:", inst.dt.astype(int).tolist(), inst.data_types)
    dt = time.monotonic() - t0
    print(f"done {n} cases in {dt:.1f}s  status_mismatch={mism_status} obj_mismatch={mism_obj}")


if __name__ == "__main__":
    main()
