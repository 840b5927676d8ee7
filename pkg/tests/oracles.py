"""Brute-force from-definition oracles, kept independent of the library paths.

The rigid alignment here uses Horn's quaternion eigenvalue method while the
library uses the SVD solution; metrics are computed directly on 4x4
homogeneous matrices with numpy inverses. Association enumerates all pairs.
"""

import math

import numpy as np


def quat_rotmat(q):
    x, y, z, w = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def horn_quaternion_align(est, ref):
    """Rigid (R, t) minimizing sum ||R e_i + t - r_i||^2, quaternion method."""
    est = np.asarray(est, float)
    ref = np.asarray(ref, float)
    mu_e, mu_r = est.mean(axis=0), ref.mean(axis=0)
    ec, rc = est - mu_e, ref - mu_r
    M = ec.T @ rc  # sum over points of outer(e_c, r_c)
    sxx, sxy, sxz = M[0]
    syx, syy, syz = M[1]
    szx, szy, szz = M[2]
    N = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    vals, vecs = np.linalg.eigh(N)
    q_wxyz = vecs[:, np.argmax(vals)]
    q = np.array([q_wxyz[1], q_wxyz[2], q_wxyz[3], q_wxyz[0]])
    R = quat_rotmat(q)
    t = mu_r - R @ mu_e
    return R, t


def associate_bruteforce(times_e, times_r, max_dt):
    cands = []
    for i, te in enumerate(times_e):
        for j, tr in enumerate(times_r):
            if abs(te - tr) <= max_dt:
                cands.append((abs(te - tr), i, j))
    cands.sort()
    used_e, used_r, pairs = set(), set(), []
    for _, i, j in cands:
        if i in used_e or j in used_r:
            continue
        used_e.add(i)
        used_r.add(j)
        pairs.append((i, j))
    return sorted(pairs)


def ate_bruteforce(mats_e, times_e, mats_r, times_r, max_dt=0.1):
    """ATE from homogeneous matrices: align matched positions, RMS residual."""
    pairs = associate_bruteforce(times_e, times_r, max_dt)
    pe = np.array([mats_e[i][:3, 3] for i, _ in pairs])
    pr = np.array([mats_r[j][:3, 3] for _, j in pairs])
    R, t = horn_quaternion_align(pe, pr)
    res = (pe @ R.T + t) - pr
    return math.sqrt(float(np.mean(np.sum(res * res, axis=1))))


def rpe_bruteforce(mats_e, times_e, mats_r, times_r, delta=1, max_dt=0.1):
    """RPE from homogeneous matrices: (RMS translation m, RMS rotation deg)."""
    pairs = associate_bruteforce(times_e, times_r, max_dt)
    terrs, rerrs = [], []
    for k in range(len(pairs) - delta):
        i0, j0 = pairs[k]
        i1, j1 = pairs[k + delta]
        rel_e = np.linalg.inv(mats_e[i0]) @ mats_e[i1]
        rel_r = np.linalg.inv(mats_r[j0]) @ mats_r[j1]
        err = np.linalg.inv(rel_r) @ rel_e
        terrs.append(np.linalg.norm(err[:3, 3]))
        c = (np.trace(err[:3, :3]) - 1.0) / 2.0
        rerrs.append(math.degrees(math.acos(min(1.0, max(-1.0, c)))))
    return (
        math.sqrt(float(np.mean(np.square(terrs)))),
        math.sqrt(float(np.mean(np.square(rerrs)))),
    )
