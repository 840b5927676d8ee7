"""Pose representations, trajectory metrics, and trajectory file I/O.

Rotations are 3-vector Euler angles in radians using the intrinsic Z-Y-X
(yaw-pitch-roll) convention throughout: R = Rz(yaw) @ Ry(pitch) @ Rx(roll),
with the vector stored as (roll, pitch, yaw). Translations are meters.

Trajectory files use the TUM text convention: one pose per line,
`timestamp tx ty tz qx qy qz qw`, quaternions converted at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, AssociationError, ContractError, GeometryError

_TWO_PI = 2.0 * math.pi


def wrap_angle(x):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    x = np.asarray(x, dtype=np.float64)
    wrapped = x - _TWO_PI * np.ceil((x - math.pi) / _TWO_PI)
    return wrapped if wrapped.ndim else float(wrapped)


@dataclass(frozen=True)
class Pose6DoF:
    """Rigid pose: translation t (m) and Euler rotation r (rad), wrapped."""

    t: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        t = np.array(self.t, dtype=np.float64).reshape(3)
        r = wrap_angle(np.array(self.r, dtype=np.float64).reshape(3))
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "r", r)

    @staticmethod
    def identity() -> "Pose6DoF":
        return Pose6DoF(np.zeros(3), np.zeros(3))

    def rotation(self) -> np.ndarray:
        return euler_to_rotmat(self.r)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation()
        T[:3, 3] = self.t
        return T


@dataclass(frozen=True)
class TimedPose:
    timestamp: float
    pose: Pose6DoF


@dataclass
class Trajectory:
    """Timestamped absolute pose sequence with strictly increasing times."""

    poses: list[TimedPose] = field(default_factory=list)

    def __post_init__(self):
        if len(self.poses) < 1:
            raise ContractError("Trajectory requires at least one pose")
        times = [p.timestamp for p in self.poses]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ContractError("Trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i) -> TimedPose:
        return self.poses[i]

    def times(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.poses])

    def positions(self) -> np.ndarray:
        return np.array([p.pose.t for p in self.poses])


# ---------------------------------------------------------------------------
# rotation conversions


def euler_to_rotmat(r) -> np.ndarray:
    """Rotation matrix for Euler (roll, pitch, yaw), intrinsic Z-Y-X."""
    roll, pitch, yaw = np.asarray(r, dtype=np.float64).reshape(3)
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def _check_rotation(R: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise GeometryError(f"rotation matrix must be 3x3, got {R.shape}")
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > tol:
        raise GeometryError(f"matrix is not orthonormal (max |R^T R - I| = {err:.3e})")
    if np.linalg.det(R) < 0:
        raise GeometryError("matrix has determinant -1 (reflection, not rotation)")
    return R


def rotmat_to_euler(R, tol: float = 1e-9) -> np.ndarray:
    """Euler (roll, pitch, yaw) from a rotation matrix.

    At gimbal lock (|pitch| = pi/2 within tolerance) yaw is fixed to 0 and
    the remaining freedom is absorbed into roll.
    """
    R = _check_rotation(R, tol)
    sp = -R[2, 0]
    sp = min(1.0, max(-1.0, sp))
    if abs(abs(sp) - 1.0) <= tol:
        pitch = math.copysign(math.pi / 2.0, sp)
        # with yaw = 0: R[0,1] = sp*sr, R[0,2] = sp*cr
        roll = math.atan2(R[0, 1] * sp, R[0, 2] * sp)
        return np.array([roll, pitch, 0.0])
    pitch = math.asin(sp)
    roll = math.atan2(R[2, 1], R[2, 2])
    yaw = math.atan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def rotmat_to_quat(R) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) from a rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        qw = 0.25 * s
        qx = (R[2, 1] - R[1, 2]) / s
        qy = (R[0, 2] - R[2, 0]) / s
        qz = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        qw = (R[2, 1] - R[1, 2]) / s
        qx = 0.25 * s
        qy = (R[0, 1] + R[1, 0]) / s
        qz = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        qw = (R[0, 2] - R[2, 0]) / s
        qx = (R[0, 1] + R[1, 0]) / s
        qy = 0.25 * s
        qz = (R[1, 2] + R[2, 1]) / s
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        qw = (R[1, 0] - R[0, 1]) / s
        qx = (R[0, 2] + R[2, 0]) / s
        qy = (R[1, 2] + R[2, 1]) / s
        qz = 0.25 * s
    q = np.array([qx, qy, qz, qw])
    return q / np.linalg.norm(q)


def quat_to_rotmat(q) -> np.ndarray:
    qx, qy, qz, qw = np.asarray(q, dtype=np.float64).reshape(4)
    n = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
    if n == 0:
        raise GeometryError("zero quaternion")
    qx, qy, qz, qw = qx / n, qy / n, qz / n, qw / n
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ]
    )


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, radians in [0, pi]."""
    R = np.asarray(R, dtype=np.float64)
    c = (np.trace(R) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


# ---------------------------------------------------------------------------
# pose algebra


def compose(parent: Pose6DoF, relative: Pose6DoF) -> Pose6DoF:
    """Rigid composition: apply `relative` in the frame of `parent`."""
    Rp = parent.rotation()
    R = Rp @ relative.rotation()
    t = Rp @ relative.t + parent.t
    return Pose6DoF(t, rotmat_to_euler(R))

def inverse(p: Pose6DoF) -> Pose6DoF:
    R = p.rotation()
    return Pose6DoF(-(R.T @ p.t), rotmat_to_euler(R.T))


def relative_pose(a: Pose6DoF, b: Pose6DoF) -> Pose6DoF:
    """Pose of `b` expressed in the frame of `a` (a^-1 o b)."""
    return compose(inverse(a), b)


def integrate(initial: Pose6DoF, rels: list[Pose6DoF], timestamps) -> Trajectory:
    """Cumulatively compose relative poses into an absolute trajectory."""
    timestamps = list(timestamps)
    if len(timestamps) != len(rels) + 1:
        raise ContractError(
            f"integrate: need len(rels)+1 timestamps, got {len(timestamps)} for {len(rels)} rels"
        )
    poses = [TimedPose(timestamps[0], initial)]
    current = initial
    for rel, ts in zip(rels, timestamps[1:]):
        current = compose(current, rel)
        poses.append(TimedPose(ts, current))
    return Trajectory(poses)


# ---------------------------------------------------------------------------
# association and alignment


def associate(est: Trajectory, ref: Trajectory, max_dt: float = 0.1) -> list[tuple[int, int]]:
    """Greedy one-to-one nearest-in-time matching within max_dt.

    Candidate pairs are taken in ascending |dt|; each est and ref index is
    used at most once. Returns (est_idx, ref_idx) pairs sorted by est index.
    """
    if len(est) == 0 or len(ref) == 0:
        raise AssociationError("associate: empty trajectory")
    te, tr = est.times(), ref.times()
    candidates = []
    for i, ti in enumerate(te):
        j0 = int(np.searchsorted(tr, ti))
        for j in (j0 - 1, j0, j0 + 1):
            if 0 <= j < len(tr):
                dt = abs(tr[j] - ti)
                if dt <= max_dt:
                    candidates.append((dt, i, j))
    candidates.sort()
    used_e: set[int] = set()
    used_r: set[int] = set()
    pairs = []
    for _, i, j in candidates:
        if i in used_e or j in used_r:
            continue
        used_e.add(i)
        used_r.add(j)
        pairs.append((i, j))
    if not pairs:
        raise AssociationError(f"associate: no pose pairs within {max_dt} s")
    pairs.sort()
    return pairs


def horn_align(est_pts, ref_pts, with_scale: bool = False):
    """Closed-form least-squares rigid transform mapping est onto ref.

    Returns (R, t) minimizing sum ||R @ est_i + t - ref_i||^2 via the SVD
    solution. With with_scale=True a similarity scale is also estimated and
    returned as (R, t, s); this is a diagnostic, metrics use rigid-only.
    """
    est = np.asarray(est_pts, dtype=np.float64)
    ref = np.asarray(ref_pts, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 2 or est.shape[1] != 3:
        raise AlignmentError(f"horn_align: point sets must both be (N, 3), got {est.shape} and {ref.shape}")
    n = est.shape[0]
    if n < 3:
        raise AlignmentError(f"horn_align: need at least 3 pairs, got {n}")
    mu_e = est.mean(axis=0)
    mu_r = ref.mean(axis=0)
    ec = est - mu_e
    rc = ref - mu_r
    cov = rc.T @ ec / n
    U, S, Vt = np.linalg.svd(cov)
    if S[1] <= max(S[0] * 1e-9, 1e-15):
        raise AlignmentError("horn_align: rank-deficient cross-covariance (collinear points)")
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    if with_scale:
        var_e = (ec * ec).sum() / n
        s = float(np.trace(np.diag(S) @ D) / var_e)
        t = mu_r - s * (R @ mu_e)
        return R, t, s
    t = mu_r - R @ mu_e
    return R, t


# ---------------------------------------------------------------------------
# error metrics


def ate(est: Trajectory, ref: Trajectory, max_dt: float = 0.1) -> float:
    """Absolute trajectory error: RMS position residual after rigid alignment."""
    pairs = associate(est, ref, max_dt)
    est_pts = np.array([est[i].pose.t for i, _ in pairs])
    ref_pts = np.array([ref[j].pose.t for _, j in pairs])
    R, t = horn_align(est_pts, ref_pts)
    residuals = (est_pts @ R.T + t) - ref_pts
    return float(np.sqrt(np.mean(np.sum(residuals * residuals, axis=1))))


def rpe_samples(
    est: Trajectory, ref: Trajectory, delta: int = 1, max_dt: float = 0.1
) -> tuple[np.ndarray, np.ndarray]:
    """Per-window relative pose errors: (translation m, rotation deg) arrays.

    For associated pose pairs k and k+delta, the discrepancy is
    ref_rel^-1 o est_rel; translation is its position norm, rotation its
    geodesic angle.
    """
    if delta < 1:
        raise ContractError(f"rpe: delta must be >= 1, got {delta}")
    pairs = associate(est, ref, max_dt)
    if len(pairs) <= delta:
        raise ContractError(f"rpe: need more than {delta} associated poses, have {len(pairs)}")
    t_errs, r_errs = [], []
    for k in range(len(pairs) - delta):
        i0, j0 = pairs[k]
        i1, j1 = pairs[k + delta]
        rel_est = relative_pose(est[i0].pose, est[i1].pose)
        rel_ref = relative_pose(ref[j0].pose, ref[j1].pose)
        err = compose(inverse(rel_ref), rel_est)
        t_errs.append(np.linalg.norm(err.t))
        r_errs.append(math.degrees(rotation_angle(err.rotation())))
    return np.array(t_errs), np.array(r_errs)


def rpe(est: Trajectory, ref: Trajectory, delta: int = 1, max_dt: float = 0.1) -> tuple[float, float]:
    """RMS relative pose error over windows: (translation m, rotation deg)."""
    t_errs, r_errs = rpe_samples(est, ref, delta, max_dt)
    return float(np.sqrt(np.mean(t_errs**2))), float(np.sqrt(np.mean(r_errs**2)))


# ---------------------------------------------------------------------------
# trajectory text I/O (TUM convention)


def write_trajectory(path, traj: Trajectory) -> None:
    """Write `timestamp tx ty tz qx qy qz qw` lines (shortest round-trip floats)."""
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for tp in traj.poses:
            q = rotmat_to_quat(tp.pose.rotation())
            vals = [tp.timestamp, *tp.pose.t, *q]
            fh.write(" ".join(repr(float(v)) for v in vals) + "\n")


def read_trajectory(path) -> Trajectory:
    poses = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 8:
                raise ContractError(f"trajectory line needs 8 fields, got {len(vals)}: {line!r}")
            ts, tx, ty, tz, qx, qy, qz, qw = vals
            r = rotmat_to_euler(quat_to_rotmat([qx, qy, qz, qw]), tol=1e-6)
            poses.append(TimedPose(ts, Pose6DoF(np.array([tx, ty, tz]), r)))
    return Trajectory(poses)
