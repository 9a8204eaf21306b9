#!/usr/bin/env python3
"""Regenerates the golden fixtures.

Deterministic cases are computed here with numpy, independently of the Rust code. Simulation
cases only record their design and pass criterion; the Rust checker runs the simulation. The
Monte Carlo desk-scale case is recorded from a run of the `csc-ipca mc` binary.

    python3 oracle.py            # everything except the recorded Monte Carlo
    python3 oracle.py --record   # also re-record the Monte Carlo numbers (needs cargo)
"""

import argparse
import json
import subprocess
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
DATA = HERE / "data"


def dump(name, inputs, expected):
    DATA.mkdir(exist_ok=True)
    path = DATA / f"{name}.json"
    path.write_text(json.dumps({"inputs": inputs, "expected": expected}, indent=1) + "\n")
    return f"data/{name}.json"


def tolist(a):
    return np.asarray(a, dtype=float).tolist()


def fitted(x, gamma, factors):
    # x: N x T x L, gamma: L x K, factors: K x T
    n, t, _ = x.shape
    out = np.zeros((n, t))
    for i in range(n):
        for s in range(t):
            out[i, s] = x[i, s] @ gamma @ factors[:, s]
    return out


def objective_double_loop(rng):
    n, t, l, k = 3, 4, 2, 1
    y = rng.normal(size=(n, t))
    x = rng.normal(size=(n, t, l))
    gamma = rng.normal(size=(l, k))
    factors = rng.normal(size=(k, t))
    total = 0.0
    for i in range(n):
        for s in range(t):
            fit = 0.0
            for a in range(l):
                for b in range(k):
                    fit += x[i, s, a] * gamma[a, b] * factors[b, s]
            total += (y[i, s] - fit) ** 2
    inputs = dict(y=tolist(y), x=tolist(x), gamma=tolist(gamma), factors=tolist(factors))
    return dump("objective_double_loop", inputs, {"objective": total})


def pca_discarded_spectrum(rng):
    y = rng.normal(size=(5, 8))
    s = np.linalg.svd(y, compute_uv=False)
    return dump("pca_discarded_spectrum", {"y": tolist(y), "k": 2}, {"reconstruction_error": float(np.sum(s[2:] ** 2))})


def factor_update(rng):
    n, l, k = 6, 3, 2
    x_t = rng.normal(size=(n, l))
    y_t = rng.normal(size=n)
    gamma = rng.normal(size=(l, k))
    z = x_t @ gamma
    f = np.linalg.inv(z.T @ z) @ z.T @ y_t
    return dump("factor_update", dict(x_t=tolist(x_t), y_t=tolist(y_t), gamma=tolist(gamma)), {"factor": tolist(f)})


def gamma_update(rng):
    n, t, l, k = 4, 5, 2, 2
    y = rng.normal(size=(n, t))
    x = rng.normal(size=(n, t, l))
    factors = rng.normal(size=(k, t))
    # Regressors for vec(gamma) stacked column by column.
    rows, targets = [], []
    for i in range(n):
        for s in range(t):
            rows.append(np.kron(factors[:, s], x[i, s]))
            targets.append(y[i, s])
    vec, *_ = np.linalg.lstsq(np.array(rows), np.array(targets), rcond=None)
    gamma = vec.reshape((k, l)).T
    inputs = dict(y=tolist(y), x=tolist(x), factors=tolist(factors), perturbations=1000, radius=0.1, seed=11)
    return dump("gamma_update", inputs, {"gamma": tolist(gamma)})


def sign_columns(m):
    m = m.copy()
    for j in range(m.shape[1]):
        col = m[:, j]
        best = col[np.argmax(np.abs(col))]
        if best < 0:
            m[:, j] = -col
    return m


def normalize(gamma, factors):
    r1 = np.linalg.cholesky(gamma.T @ gamma).T
    m = r1 @ factors @ factors.T @ r1.T
    w, v = np.linalg.eigh((m + m.T) / 2)
    order = np.argsort(-w, kind="stable")
    r2 = sign_columns(v[:, order])
    r = np.linalg.solve(r1, r2)
    return gamma @ r, np.linalg.solve(r, factors)


def normalization_rotation(rng):
    l, k, t = 10, 3, 30
    gamma = rng.normal(size=(l, k))
    factors = rng.normal(size=(k, t))
    g, f = normalize(gamma, factors)
    inputs = dict(gamma=tolist(gamma), factors=tolist(factors))
    return dump("normalization_rotation", inputs, {"gamma": tolist(g), "factors": tolist(f)})


def normalization_equal_eigenvalues(rng):
    l, k, t = 5, 2, 12
    q, _ = np.linalg.qr(rng.normal(size=(l, k)))
    # Orthogonal rows with equal norms: F F' / T = 4 I.
    h = np.array([[1, 1, 1, 1], [1, -1, 1, -1]], dtype=float)
    factors = 2.0 * np.tile(h, (1, t // 4))
    inputs = dict(gamma=tolist(q), factors=tolist(factors))
    return dump("normalization_equal_eigenvalues", inputs, {"factor_variance": [4.0, 4.0]})


def structural_consistency(rng):
    n, t, l, k = 5, 6, 3, 2
    y = rng.normal(size=(n, t))
    x = rng.normal(size=(n, t, l))
    gamma = rng.normal(size=(l, k))
    factors = rng.normal(size=(k, t))
    fit = fitted(x, gamma, factors)
    inputs = dict(y=tolist(y), x=tolist(x), gamma=tolist(gamma), factors=tolist(factors))
    return dump("structural_consistency", inputs, {"fitted": tolist(fit), "objective": float(np.sum((y - fit) ** 2))})


def staggered_alignment(rng):
    # Exact factor model, 8 controls and 2 treated units adopting at periods 5 and 7 (1-based).
    n_ctrl, t, l, k = 8, 10, 3, 1
    adopt = [4, 6]  # first treated period, 0-based
    gamma = rng.normal(size=(l, k))
    factors = 1.0 + rng.uniform(size=(k, t))
    x = rng.normal(size=(n_ctrl + 2, t, l))
    y = fitted(x, gamma, factors)
    d = np.zeros((n_ctrl + 2, t))
    effects = []
    for row, a in enumerate(adopt):
        i = n_ctrl + row
        e = np.arange(1, t - a + 1, dtype=float) * (row + 1)
        y[i, a:] += e
        d[i, a:] = 1
        effects.append(e)
    # Hand alignment: average over the units still observed at each event time.
    longest = max(len(e) for e in effects)
    att, counts = [], []
    for s in range(longest):
        vals = [e[s] for e in effects if s < len(e)]
        att.append(sum(vals) / len(vals))
        counts.append(len(vals))
    inputs = dict(y=tolist(y), x=tolist(x), d=tolist(d), k=k)
    expected = dict(att=att, att_counts=counts, effect_lengths=[len(e) for e in effects])
    return dump("staggered_alignment", inputs, expected)


def permutation_hand_case():
    path = [0.0, 0.0, 0.0, 10.0]
    # Cyclic shifts: only the identity puts the 10 in the post slot.
    stats = [abs(path[(3 + s) % 4]) for s in range(4)]
    p = sum(1 for v in stats if v >= stats[0]) / 4
    return dump("permutation_hand_case", dict(path=path, window=1, q=1.0), dict(p_value=p, n_permutations=4))


def q2_statistic(rng):
    u = rng.normal(size=7)
    return dump("q2_statistic", dict(residuals=tolist(u), q=2.0), dict(statistic=float(np.sum(np.abs(u) ** 2) / np.sqrt(len(u)))))


def var_stationary_mean(rng):
    dim, radius, drift = 4, 0.6, 2.0
    a = rng.normal(size=(dim, dim))
    a *= radius / np.max(np.abs(np.linalg.eigvals(a)))
    mean = np.linalg.solve(np.eye(dim) - a, drift * np.ones(dim))
    inputs = dict(coef=tolist(a), drift=drift, len=200000, burn_in=50, seed=3)
    return dump("var_stationary_mean", inputs, dict(mean=tolist(mean)))


def simulation_cases():
    noiseless_k2 = dict(
        n_treat=5, n_ctrl=30, t_pre=15, t_post=5, l=6, k=2, noise_sd=0.0, effect_sd=0.0,
        fe_range=[0.0, 0.0], beta_range=[0.0, 0.0],
    )
    low_noise = dict(fe_range=[0.0, 0.0], beta_range=[0.0, 0.0])
    return {
        "als_monotonicity": (dict(dgp=dict(n_ctrl=45, t_pre=20, t_post=10, l=10, k=3), seeds=20, k=3), dict(slack=1e-12)),
        "placebo": (dict(dgp=dict(effect=dict(kind="none")), seeds=100, k=3), dict(max_standard_errors=2.0)),
        "tuning_bootstrap": (dict(dgp=noiseless_k2, seeds=5, k_max=4, n_reps=20), dict(k_best=2)),
        "tuning_loo": (dict(dgp=noiseless_k2, seeds=5, k_max=4), dict(k_best=2)),
        "conformal_size": (dict(dgp={}, seeds=200, k=3, null="truth", level=0.1), dict(min_rate=0.04, max_rate=0.20)),
        "conformal_power": (dict(dgp=low_noise, seeds=200, k=3, null="zero", level=0.1), dict(min_rate=0.8)),
    }


MANIFEST = [
    ("objective_double_loop", "objective_double_loop", 1e-10, "oracle.py: cell-by-cell quadruple loop"),
    ("pca_discarded_spectrum", "pca_discarded_spectrum", 1e-10, "oracle.py: numpy full SVD, sum of discarded squared singular values"),
    ("factor_update", "factor_update", 1e-10, "oracle.py: normal equations with an explicit inverse"),
    ("gamma_update", "gamma_update", 1e-8, "oracle.py: numpy lstsq on Kronecker regressors; Rust adds a 1000-draw random search"),
    ("normalization_rotation", "normalization_rotation", 1e-8, "oracle.py: Cholesky plus eigh rotation, constraints checked by multiplication"),
    ("normalization_equal_eigenvalues", "normalization_equal_eigenvalues", 1e-8, "oracle.py: orthogonal equal-norm factor rows"),
    ("structural_consistency", "structural_consistency", 1e-10, "oracle.py: x_it gamma f_t by direct products"),
    ("staggered_alignment", "staggered_alignment", 1e-6, "oracle.py: hand alignment of event-time effects"),
    ("permutation_hand_case", "permutation_hand_case", 0.0, "oracle.py: enumeration of the 4 cyclic shifts"),
    ("q2_statistic", "q2_statistic", 1e-12, "oracle.py: direct formula"),
    ("var_stationary_mean", "var_stationary_mean", 0.05, "oracle.py: (I - A)^-1 mu"),
    ("als_monotonicity", "als_monotonicity", 1e-12, "simulation: objective path audit on 20 draws"),
    ("placebo", "placebo", 0.0, "simulation: no-effect draws, |mean ATT| within 2 Monte Carlo SE"),
    ("tuning_bootstrap", "tuning_bootstrap", 0.0, "simulation: noiseless K=2 draws"),
    ("tuning_loo", "tuning_loo", 0.0, "simulation: noiseless K=2 draws"),
    ("conformal_size", "conformal_size", 0.0, "simulation: null at the realized effect path, 200 seeds"),
    ("conformal_power", "conformal_power", 0.0, "simulation: zero null against the ramp, no fixed effects or omitted-covariate term, 200 seeds"),
    ("mc_desk", "mc_desk", 1e-9, "recorded: csc-ipca mc on the desk-scale design (seed in the file)"),
]

MC_DESK_CONFIG = {
    "dgp": {"n_treat": 5, "n_ctrl": 40, "t_pre": 10, "t_post": 5, "l": 9, "alpha_observed": 1.0, "seed": 20240601},
    "estimators": ["ipca"],
    "n_reps": 200,
}


def record_mc_desk():
    cfg = DATA / "mc_desk.config.json"
    cfg.write_text(json.dumps(MC_DESK_CONFIG, indent=1) + "\n")
    out = subprocess.run(
        ["cargo", "run", "--release", "-q", "-p", "csc-ipca", "--", "mc", "--config", str(cfg), "--format", "json"],
        cwd=HERE, check=True, capture_output=True, text=True,
    ).stdout
    report = json.loads(out)["cells"][0]["report"]["estimators"][0]
    expected = {m: report[m] for m in ("bias", "rmse", "std")}
    dump("mc_desk", {"config": MC_DESK_CONFIG}, expected)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--record", action="store_true", help="re-record the Monte Carlo fixture")
    args = parser.parse_args()

    rng = np.random.default_rng(20240601)
    objective_double_loop(rng)
    pca_discarded_spectrum(rng)
    factor_update(rng)
    gamma_update(rng)
    normalization_rotation(rng)
    normalization_equal_eigenvalues(rng)
    structural_consistency(rng)
    staggered_alignment(rng)
    permutation_hand_case()
    q2_statistic(rng)
    var_stationary_mean(rng)
    for name, (inputs, expected) in simulation_cases().items():
        dump(name, inputs, expected)
    if args.record:
        record_mc_desk()

    manifest = {
        "fixtures": [
            {"name": n, "kind": k, "file": f"data/{n}.json", "tolerance": tol, "oracle": o}
            for n, k, tol, o in MANIFEST
        ]
    }
    (HERE / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


if __name__ == "__main__":
    main()
