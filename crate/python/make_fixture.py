"""Generate the synthetic regional-innovation panel used by the tests.

The panel has 239 regions x 8 years (2016-2023) x 14 indicators plus a
scoreboard tier label per row. It is built so that the aggregate statistics
the pipeline reports land on known values:

* the correlation matrix of the 14 indicators has a prescribed spectrum,
* a 2-D subspace carries four clusters with prescribed sizes and centroids,
  and that partition is the global Factorial K-means optimum,
* pivot shares, nearest-to-centroid members, KS statistics between period
  slices and the tier/cluster cross-tab are fixed in advance.

Run:  python python/make_fixture.py --out data/euris_fixture.csv
"""

import argparse
import csv
import itertools
import sys

import numpy as np

INDICATORS = [
    "1.1.2", "1.1.3", "1.2.1", "1.2.2", "1.3.2", "2.1.1", "2.2.1",
    "2.3.2", "3.2.2", "3.3.1", "3.3.2", "3.3.3", "4.1.1", "4.3.2",
]
P = len(INDICATORS)
YEARS = list(range(2016, 2024))
N_REGIONS = 239
N = N_REGIONS * len(YEARS)

# upper triangle (row-major) of the target correlation matrix, 2-decimal precision
TARGET_UPPER = [
    0.48, 0.56, 0.38, 0.60, 0.23, 0.26, 0.61, 0.46, 0.25, 0.36, 0.00783, 0.36, -0.21,
    0.56, 0.56, 0.76, 0.15, 0.27, 0.45, 0.50, 0.48, 0.38, 0.07, 0.20, -0.52,
    0.56, 0.42, 0.40, 0.38, 0.60, 0.91, 0.43, 0.37, 0.02, 0.39, -0.30,
    0.57, 0.16, 0.26, 0.35, 0.54, 0.51, 0.35, 0.13, 0.22, -0.52,
    0.12, 0.20, 0.34, 0.35, 0.26, 0.21, -0.04, 0.07, -0.55,
    0.53, 0.24, 0.42, 0.19, 0.11, -0.03, 0.19, -0.03,
    0.39, 0.51, 0.54, 0.28, 0.16, 0.51, -0.12,
    0.55, 0.39, 0.48, 0.10, 0.71, -0.15,
    0.54, 0.38, 0.07, 0.42, -0.28,
    0.43, 0.36, 0.49, -0.30,
    0.46, 0.38, -0.12,
    0.24, 0.07,
    0.06,
]
TARGET_EIGEN = [
    5.76009622, 1.96016931, 1.40769345, 1.11137752, 0.74551365, 0.72981916,
    0.47980632, 0.42690114, 0.37658725, 0.35238312, 0.28888394, 0.16861254,
    0.13479526, 0.05736112,
]

# cluster order: emerging, moderate, strong, leader
SIZES = np.array([679, 477, 475, 281])
CENTROIDS = np.array([
    [-0.622897, 1.700025],
    [0.315444, 0.006925],
    [-0.261154, -0.991203],
    [1.411135, -2.444122],
])
WITHIN = np.array([0.006, 0.010])
PIVOT_TARGET = np.array([0.68, 0.61, 0.70, 0.91])

# (region code, name, year, cluster, reduced coordinates)
PLANTED = [
    ("ITF5", "Basilicata", 2016, 0, (-0.636459, 1.703864)),
    ("DE27", "Schwaben", 2020, 1, (0.312302, -0.03747)),
    ("NO07", "Nord-Norge", 2016, 2, (-0.280986, -1.06179)),
    ("DE3", "Berlin", 2023, 3, (1.629911, -1.935844)),
]
# clusters whose planted member must be the one nearest the centroid
HOLE_CLUSTERS = (0, 1, 2)

TIER_NAMES = ["Innovation leaders", "Strong innovators", "Moderate innovators", "Emerging innovators"]
# rows: cluster (leader, strong, moderate, emerging); cols: tier (same order)
CROSS_TAB = np.array([
    [247, 34, 0, 0],
    [30, 215, 230, 0],
    [57, 151, 182, 87],
    [0, 0, 172, 507],
])

KS_TARGETS = {"2.2.1": 145, "2.1.1": 53}  # numerators over 1434 (x vs z slices)

# indicator scale: (typical level, used only for the indicators without named anchors)
LEVELS = {
    "1.1.2": 36.0, "1.1.3": 10.5, "1.2.1": 1450.0, "1.2.2": 8.9, "1.3.2": 27.0,
    "3.2.2": 85.0, "3.3.1": 2.9, "3.3.2": 6.2, "3.3.3": 3.4, "4.3.2": 14.0,
}
# (level, scale) for the indicators carrying named values
ANCHOR_UNITS = {"2.2.1": (0.95, 0.28), "2.1.1": (0.60, 0.17), "4.1.1": (15.0, 4.0), "2.3.2": (3.9, 1.2)}
ANCHORS = {
    # indicator: (Campania 2023, Hamburg 2023)
    "2.2.1": (0.63, 1.22),
    "2.1.1": (0.68, 1.04),
    "4.1.1": (13.0, 21.8),
    "2.3.2": (3.03, 8.53),
}
BERLIN_ICT = 11.8


def msqrt(m, inverse=False):
    e, v = np.linalg.eigh(m)
    e = e ** (-0.5 if inverse else 0.5)
    return v @ np.diag(e) @ v.T


def target_correlation():
    r0 = np.eye(P)
    r0[np.triu_indices(P, 1)] = TARGET_UPPER
    r0 = np.triu(r0) + np.triu(r0, 1).T
    lam = np.array(TARGET_EIGEN)
    r = r0.copy()
    for _ in range(3000):
        _, v = np.linalg.eigh(r)
        v = v[:, ::-1]
        r1 = v @ np.diag(lam) @ v.T
        d = np.sqrt(np.diag(r1))
        r = np.clip(r1 / np.outer(d, d), r0 - 0.005, r0 + 0.005)
        np.fill_diagonal(r, 1.0)
    return r


def ring_noise(rng, m, core, radius):
    """Gaussian core plus a circular ring. Anisotropy matching WITHIN comes from
    squeezing the core and concentrating ring angles around the second axis, so
    the final exact-covariance transform is close to a pure scaling."""
    ratio = np.sqrt(WITHIN[0] / WITHIN[1])
    nc = int(round(m * core))
    pts = rng.normal(size=(nc, 2)) * [ratio, 1.0]
    spread = 0.786 * np.pi / 2
    ang = np.pi / 2 + rng.uniform(-spread, spread, m - nc) + np.pi * rng.integers(0, 2, m - nc)
    rad = radius + 0.3 * rng.normal(size=m - nc)
    pts = np.r_[pts, np.c_[rad * np.cos(ang), rad * np.sin(ang)]]
    rng.shuffle(pts)
    return pts


def planted_noise(rng, shapes, labels, named_idx, named_off):
    """Within-cluster offsets with pooled scatter exactly n*diag(WITHIN)."""
    raw = np.zeros((N, 2))
    for c in range(4):
        idx = np.where(labels == c)[0]
        raw[idx] = ring_noise(rng, len(idx), *shapes[c])
    fixed = np.zeros(N, bool)
    fixed[named_idx] = True
    hole = {c: np.linalg.norm(named_off[i]) for i, c in enumerate(labels[named_idx]) if c in HOLE_CLUSTERS}

    for _ in range(50):
        z = raw.copy()
        shift = np.zeros((4, 2))
        scat = np.zeros((2, 2))
        for i, off in zip(named_idx, named_off):
            scat += np.outer(off, off)
        for c in range(4):
            rest = np.where((labels == c) & ~fixed)[0]
            z[rest] -= z[rest].mean(0)
            s = sum(named_off[j] for j, i in enumerate(named_idx) if labels[i] == c)
            shift[c] = -np.asarray(s) / len(rest) if np.ndim(s) else 0.0
            scat += len(rest) * np.outer(shift[c], shift[c])
        free = ~fixed
        zz = z[free].T @ z[free]
        g = N * np.diag(WITHIN) - scat
        t = msqrt(g) @ msqrt(zz, inverse=True)
        out = np.zeros((N, 2))
        out[free] = z[free] @ t.T + shift[labels[free]]
        out[named_idx] = named_off
        violated = False
        for c, h in hole.items():
            rest = np.where((labels == c) & free)[0]
            d = np.linalg.norm(out[rest], axis=1)
            bad = rest[d < 1.08 * h]
            if len(bad):
                violated = True
                pos = out[bad]
                r = np.linalg.norm(pos, axis=1, keepdims=True)
                pos = pos / np.maximum(r, 1e-12) * (h * (1.12 + 0.4 * rng.uniform(size=(len(bad), 1))))
                raw[bad] = np.linalg.solve(t, (pos - shift[c]).T).T
        if not violated:
            return out
    raise RuntimeError("hole constraint did not settle")


def pivot_shares(noise, labels):
    out = []
    for c in range(4):
        d = np.linalg.norm(noise[labels == c], axis=1)
        out.append(np.mean(d <= d.mean() + d.std()))
    return np.array(out)


def projection_matrix(r, y, between):
    """A with A'RA = between + diag(WITHIN), built from mixes of eigenvectors of R.

    Among the sign choices, keep those where the largest-|entry| of each column
    is positive (the solver's convention, so fitted coordinates come out in the
    given orientation) and the cluster means in indicator space are ordered
    emerging < moderate < strong < leader; prefer a large ICT gap between the
    strong and leader clusters."""
    lam, v = np.linalg.eigh(r)
    lam, v = lam[::-1], v[:, ::-1]
    w = np.diag(WITHIN)
    mu, pm = np.linalg.eigh(between + w)
    mu, pm = mu[::-1], pm[:, ::-1]

    def mix(i, j, target):
        a2 = (target - lam[j]) / (lam[i] - lam[j])
        return np.sqrt(a2), np.sqrt(1 - a2)

    (i1, j1), (i2, j2) = (0, 8), (11, 12)
    a, b = mix(i1, j1, mu[0])
    c, e = mix(i2, j2, mu[1])
    sign = np.ones(P)
    sign[INDICATORS.index("4.3.2")] = -1.0
    others = [INDICATORS.index(k) for k in ("2.2.1", "2.1.1", "4.1.1")]
    ict = INDICATORS.index("2.3.2")
    best = None
    for s0, s1, s2, s3, flip in itertools.product([1, -1], repeat=5):
        a1 = s0 * (a * v[:, i1] + s1 * b * v[:, j1])
        a2 = s2 * (c * v[:, i2] + s3 * e * v[:, j2])
        amat = np.c_[a1, flip * a2] @ pm.T
        if any(amat[np.argmax(np.abs(amat[:, j])), j] < 0 for j in range(2)):
            continue
        means = y @ np.linalg.solve(between, amat.T @ r - w @ amat.T)
        comp = (means * sign).mean(1)
        if not (comp[0] < comp[1] < comp[2] < comp[3]):
            continue
        gap = means[3] - means[2]
        score = gap[ict] + 0.3 * gap[others].min()
        if best is None or score > best[0]:
            best = (score, amat)
    if best is None:
        raise RuntimeError("no admissible orientation")
    return best[1]


def assemble(rng, r, amat, labels, y, noise):
    """Indicator matrix with covariance exactly r whose projection on amat is uy + noise.

    Returns the pieces so individual rows can later be pinned."""
    u = np.eye(4)[labels]
    uy = u @ y
    q_, _ = np.linalg.qr(np.c_[amat, rng.normal(size=(P, P - 2))])
    bc = q_[:, 2:]
    c12 = amat.T @ r @ bc
    c22 = bc.T @ r @ bc
    between = uy.T @ uy / N
    gam = np.linalg.solve(between, c12)
    ecov = c22 - c12.T @ gam
    g = rng.normal(size=(N, P - 2))
    return dict(uy=uy, noise=noise, amat=amat, bc=bc, gam=gam, ecov=ecov, g=g, basis=np.c_[u, noise])


def solve_complement(parts, fixed_rows):
    """Make the free rows of g orthogonal to [U, noise] (jointly with the fixed rows)
    and give the whole of g the exact scatter N*ecov."""
    g, basis = parts["g"], parts["basis"]
    free = np.ones(N, bool)
    free[fixed_rows] = False
    kf, gf = basis[free], g[free]
    rhs = -basis[~free].T @ g[~free]
    h = kf @ np.linalg.lstsq(kf.T @ kf, rhs, rcond=None)[0]
    zf = gf - kf @ np.linalg.lstsq(kf, gf, rcond=None)[0]
    target = N * parts["ecov"] - g[~free].T @ g[~free] - h.T @ h
    t = msqrt(zf.T @ zf, inverse=True) @ msqrt(target)
    out = g.copy()
    out[free] = h + zf @ t
    parts["g"] = out


def realise(parts):
    ep = parts["uy"] @ parts["gam"] + parts["g"]
    return (parts["uy"] + parts["noise"]) @ parts["amat"].T + ep @ parts["bc"].T


def pin_row(parts, row, cols, targets):
    """Shift one row's complement so its indicator values at cols equal targets."""
    x = realise(parts)[row]
    sub = parts["bc"][cols]
    parts["g"][row] += np.linalg.pinv(sub) @ (np.asarray(targets) - x[cols])


def fkm_check(x, labels, k=4, q=2):
    """Objective of the planted partition under the FKM criterion."""
    u = np.eye(k)[labels]
    cnt = u.sum(0)
    means = u.T @ x / cnt[:, None]
    w = x.T @ x - (means.T * cnt) @ means
    _, v = np.linalg.eigh(w)
    a = v[:, :q]
    gproj = x @ a
    yc = u.T @ gproj / cnt[:, None]
    return ((gproj - u @ yc) ** 2).sum(), a, yc


def region_codes():
    """239 sorted codes; the named regions sit at fixed positions in the order."""
    def seq(prefix, n, width=2):
        return [f"{prefix}{i + 1:0{width}d}" for i in range(n)]

    codes = (
        ["AT11", "AT12", "AT13", "AT21", "AT22", "AT31", "AT32", "AT33", "AT34"]
        + ["BE1", "BE2", "BE3", "BG3", "BG4"] + seq("CH0", 7, 1) + ["CY00"] + seq("CZ0", 7, 1)
        + ["DE1", "DE21", "DE22", "DE23", "DE24", "DE25", "DE26", "DE27", "DE3", "DE4", "DE5",
           "DE6", "DE7", "DE8", "DE9", "DEA", "DEB", "DEC", "DED", "DEE", "DEF", "DEG"]
        + seq("DK0", 5, 1) + ["EE00"] + ["EL30"] + seq("EL4", 3, 1) + seq("EL5", 4, 1) + seq("EL6", 5, 1)
        + ["ES11", "ES12", "ES13", "ES21", "ES22", "ES23", "ES24", "ES30", "ES41", "ES42", "ES43",
           "ES51", "ES52", "ES53", "ES61", "ES62", "ES63", "ES64", "ES70"]
        + ["FI19", "FI1B", "FI1C", "FI1D", "FI20"] + seq("FR", 26) + seq("HR0", 4, 1)
        + seq("HU1", 2, 1) + seq("HU2", 3, 1) + seq("HU3", 3, 1) + seq("IE0", 3, 1)
        + ["ITC1", "ITC2", "ITC3", "ITC4", "ITF1", "ITF2", "ITF3", "ITF4", "ITF5", "ITF6",
           "ITG1", "ITG2", "ITH1", "ITH2", "ITH3", "ITH4", "ITH5", "ITI1", "ITI2", "ITI3", "ITI4"]
        + ["LT01", "LT02", "LV00", "MT00"] + seq("NL1", 3, 1) + seq("NL2", 3, 1)
        + seq("NO0", 9, 1) + seq("PL", 24) + seq("PT", 9) + seq("RO", 8) + seq("RS", 5)
        + seq("SE", 8) + ["SI03", "SI04"] + seq("SK0", 4, 1) + seq("TR", 4)
    )
    assert codes == sorted(codes) and len(set(codes)) == N_REGIONS, len(codes)
    assert codes.index("DE27") == 36 and codes.index("DE3") == 37
    assert codes.index("ITF5") == 143 and codes.index("NO07") == 172
    return codes


REGION_NAMES = {
    "DE27": "Schwaben", "DE3": "Berlin", "DE6": "Hamburg", "ES61": "Andalucia",
    "ITF3": "Campania", "ITF5": "Basilicata", "NO07": "Nord-Norge",
}


def ks_numerator(a, b):
    """sup |F_a - F_b| scaled by lcm-style factor 2*len(a) = 3*len(b) for the fixture slices."""
    pooled = np.unique(np.r_[a, b])
    fa = np.searchsorted(np.sort(a), pooled, side="right") / len(a)
    fb = np.searchsorted(np.sort(b), pooled, side="right") / len(b)
    return int(round(np.abs(fa - fb).max() * len(a) * len(b) / np.gcd(len(a), len(b))))


def round_sig(v):
    return float(np.format_float_positional(v, precision=6, unique=False, fractional=False, trim="-"))


def tune_noise(seed, labels, named_idx, named_off):
    shapes = {0: [0.68, 6.0], 1: [0.61, 6.0], 2: [0.70, 6.0], 3: [0.91, 6.0]}
    for _ in range(12):
        noise = planted_noise(np.random.default_rng(seed), shapes, labels, named_idx, named_off)
        share = pivot_shares(noise, labels)
        if np.abs(share - PIVOT_TARGET).max() < 0.02:
            break
        for c in range(4):
            shapes[c][0] = float(np.clip(shapes[c][0] + 0.5 * (PIVOT_TARGET[c] - share[c]), 0.52, 0.995))
    return noise, share


def anchor_z(name, value):
    level, scale = ANCHOR_UNITS[name]
    return (value - level) / scale


def choose_anchor_rows(z, labels, exclude):
    """Campania 2023 from the strong cluster, Hamburg 2023 from the leader cluster:
    the rows already closest to their named values."""
    cols = [INDICATORS.index(k) for k in ANCHORS]
    picks = []
    for cluster, which in ((2, 0), (3, 1)):
        want = np.array([anchor_z(k, v[which]) for k, v in ANCHORS.items()])
        cand = [i for i in np.where(labels == cluster)[0] if i not in exclude]
        dist = [np.linalg.norm(z[i, cols] - want) for i in cand]
        picks.append(cand[int(np.argmin(dist))])
    return picks


def to_units(z):
    values = np.empty_like(z)
    for j, name in enumerate(INDICATORS):
        if name in ANCHOR_UNITS:
            level, scale = ANCHOR_UNITS[name]
        else:
            level = LEVELS[name]
            scale = level / (0.9 - z[:, j].min())
        values[:, j] = level + scale * z[:, j]
    values = np.vectorize(round_sig)(values)
    assert (values > 0).all(), "non-positive indicator value"
    return values


def assign_years(rng, values, fixed_slots, free_rows, codes):
    """Place rows on (region, year) slots, then swap years inside regions until the
    KS numerators for the target indicators hit their values exactly."""
    slot_row = {}
    slot_row.update(fixed_slots)
    open_slots = [(r, t) for r in codes for t in YEARS if (r, t) not in slot_row]
    perm = rng.permutation(free_rows)
    for s, i in zip(open_slots, perm):
        slot_row[s] = i
    year = np.empty(N, int)
    region = np.empty(N, object)
    for (r, t), i in slot_row.items():
        year[i] = t
        region[i] = r
    locked = set(fixed_slots.values())
    cols = {k: INDICATORS.index(k) for k in KS_TARGETS}

    def score():
        xs = year >= 2021
        zs = year <= 2017
        return sum(abs(ks_numerator(values[xs, j], values[zs, j]) - KS_TARGETS[k]) for k, j in cols.items())

    by_region = {}
    for i in range(N):
        if i not in locked:
            by_region.setdefault(region[i], []).append(i)
    keys = sorted(by_region)
    cur = score()
    steps = 0
    while cur > 0:
        steps += 1
        if steps > 200000:
            raise RuntimeError("year assignment did not converge")
        rows = by_region[keys[rng.integers(len(keys))]]
        a, b = rng.choice(rows, 2, replace=False)
        year[a], year[b] = year[b], year[a]
        new = score()
        if new <= cur:
            cur = new
        else:
            year[a], year[b] = year[b], year[a]
    return region, year


def assign_tiers(rng, z, labels, noise_sd):
    """Scoreboard tiers: noisy composite ranked inside each cluster, counts per CROSS_TAB."""
    sign = np.ones(P)
    sign[INDICATORS.index("4.3.2")] = -1.0
    composite = (z * sign).mean(1) + noise_sd * rng.normal(size=N)
    tier = np.empty(N, int)
    for row, cluster in enumerate([3, 2, 1, 0]):
        idx = np.where(labels == cluster)[0]
        idx = idx[np.argsort(-composite[idx], kind="stable")]
        start = 0
        for t, count in enumerate(CROSS_TAB[row]):
            tier[idx[start:start + count]] = t
            start += count
    return tier


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/euris_fixture.csv")
    ap.add_argument("--seed", type=int, default=20231)
    ap.add_argument("--tier-noise", type=float, default=0.15)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    r = target_correlation()
    labels = np.repeat(np.arange(4), SIZES)
    y = CENTROIDS - SIZES @ CENTROIDS / N
    starts = np.r_[0, np.cumsum(SIZES)[:-1]]
    named_idx = np.array([starts[c] for _, _, _, c, _ in PLANTED])
    named_off = np.array([np.subtract(xy, CENTROIDS[c]) for _, _, _, c, xy in PLANTED])

    noise, share = tune_noise(args.seed + 1, labels, named_idx, named_off)
    uy = np.eye(4)[labels] @ y
    amat = projection_matrix(r, y, uy.T @ uy / N)
    parts = assemble(rng, r, amat, labels, y, noise)
    solve_complement(parts, [])
    z = realise(parts)

    berlin = named_idx[3]
    camp, hamb = choose_anchor_rows(z, labels, set(named_idx))
    cols = [INDICATORS.index(k) for k in ANCHORS]
    pin_row(parts, camp, cols, [anchor_z(k, v[0]) for k, v in ANCHORS.items()])
    pin_row(parts, hamb, cols, [anchor_z(k, v[1]) for k, v in ANCHORS.items()])
    pin_row(parts, berlin, [INDICATORS.index("2.3.2")], [anchor_z("2.3.2", BERLIN_ICT)])
    solve_complement(parts, [camp, hamb, berlin])
    z = realise(parts)
    cov_err = np.abs(z.T @ z / N - r).max()
    obj, _, _ = fkm_check(z, labels)
    print(f"pivot shares {np.round(share, 3)}  cov err {cov_err:.2e}  planted FKM objective {obj:.4f}")

    codes = region_codes()
    used = set(named_idx) | {camp, hamb}
    camp_strong = next(i for i in np.where(labels == 2)[0] if i not in used)
    used.add(camp_strong)
    camp_emerging = [i for i in np.where(labels == 0)[0] if i not in used][:6]
    used.update(camp_emerging)

    values = to_units(z)

    fixed = {(code, year): named_idx[k] for k, (code, _, year, _, _) in enumerate(PLANTED)}
    fixed[("DE6", 2023)] = hamb
    fixed[("ITF3", 2023)] = camp
    fixed[("ITF3", 2022)] = camp_strong
    for t, i in zip(range(2016, 2022), camp_emerging):
        fixed[("ITF3", t)] = i
    free_rows = np.array([i for i in range(N) if i not in set(fixed.values())])
    region, year = assign_years(rng, values, fixed, free_rows, codes)

    zs = (values - values.mean(0)) / values.std(0)
    tier = assign_tiers(rng, zs, labels, args.tier_noise)

    order = sorted(range(N), key=lambda i: (-year[i], region[i]))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region_id", "year"] + INDICATORS + ["euris_label"])
        for i in order:
            code = region[i]
            rid = f"{code} - {REGION_NAMES.get(code, 'Region ' + code)}"
            cells = [np.format_float_positional(v, trim="-") for v in values[i]]
            w.writerow([rid, int(year[i])] + cells + [TIER_NAMES[tier[i]]])
    print(f"wrote {N} rows to {args.out}")


if __name__ == "__main__":
    sys.exit(main())
