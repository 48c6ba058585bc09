"""Projected-gradient oracle for the contact-force QP, plus random instances."""
import gc
import time

import numpy as np

from inhand.model import ContactInfo, Grasp, ObjectModel, ContactCandidate
from inhand.wrench import WrenchTarget, contact_geometry, friction_pyramid, wrench_matrix


def fista_nonneg(M, b, iters=200000, tol=1e-10):
    """min ||M x - b||^2 s.t. x >= 0 by accelerated projected gradient with
    function-value restarts, starting at zero."""
    Lc = 2.0 * np.linalg.norm(M, 2) ** 2
    x = np.zeros(M.shape[1])
    y = x.copy()
    t = 1.0
    f_old = float(np.sum(b ** 2))
    scale = max(f_old, 1e-300)
    MtM, Mtb = M.T @ M, M.T @ b
    for it in range(iters):
        g = 2.0 * (MtM @ y - Mtb)
        x_new = np.maximum(y - g / Lc, 0.0)
        r = M @ x_new - b
        f = float(r @ r)
        if it % 50 == 0:
            gx = 2.0 * (MtM @ x_new - Mtb)
            if np.abs(np.minimum(x_new, gx)).max() <= tol * np.sqrt(scale):
                x = x_new
                break
        if f > f_old + 1e-14 * scale:  # restart momentum
            t = 1.0
            y = x.copy()
            continue
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x_new + (t - 1) / t_new * (x_new - x)
        x, t, f_old = x_new, t_new, min(f, f_old)
    r = M @ x - b
    return x, float(r @ r)


def oracle_objective(grasp, obj, R, target, w_t, mu=1.0, L=12):
    levers, normals, tangents = contact_geometry(grasp, obj, R)
    K = len(grasp)
    cols = []
    for k in range(K):
        for g in friction_pyramid(normals[k], tangents[k], mu, L).generators:
            c = np.zeros(3 * K)
            c[3 * k:3 * k + 3] = g
            cols.append(c)
    G = np.array(cols).T
    A = wrench_matrix(levers, w_t)
    b = np.concatenate([target.f_total, np.sqrt(w_t) * target.tau_total])
    lam, z = fista_nonneg(A @ G, b)
    return z, (G @ lam).reshape(K, 3)


FACES = [np.array(v, float) for v in ([1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1])]


def random_instance(rng, max_contacts=4, achievable=None):
    """Contacts on distinct faces of a box, random orientation and target."""
    K = int(rng.integers(1, max_contacts + 1))
    half = np.array([0.05, 0.03, 0.02])
    faces = rng.choice(6, size=K, replace=False)
    cands = []
    for i, fi in enumerate(faces):
        n = FACES[fi]
        p = rng.uniform(-half, half)
        ax = int(np.flatnonzero(n)[0])
        p[ax] = half[ax] * n[ax]
        t = np.cross(n, rng.standard_normal(3))
        cands.append(ContactCandidate(f"c{i}", p, n, t / np.linalg.norm(t)))
    obj = ObjectModel("box", 0.3, np.diag([1e-4, 2e-4, 3e-4]), cands, [])
    grasp = Grasp.of([ContactInfo(f"link{i}", 0, i, np.zeros(3), cands[i].point) for i in range(K)])
    q = rng.standard_normal(4)
    from scipy.spatial.transform import Rotation
    R = Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()
    if achievable is None:
        achievable = bool(rng.integers(2))
    if achievable:
        levers, normals, tangents = contact_geometry(grasp, obj, R)
        f = np.zeros(3)
        tau = np.zeros(3)
        for k in range(K):
            pyr = friction_pyramid(normals[k], tangents[k], 1.0, 12)
            fk = pyr.generators.T @ rng.uniform(0, 1, 12)
            f += fk
            tau += np.cross(levers[k], fk)
        target = WrenchTarget(f, tau)
    else:
        target = WrenchTarget(rng.normal(0, 5, 3), rng.normal(0, 0.3, 3))
    return grasp, obj, R, target


def solve_time(fn, repeats=3):
    """Wall time of ``fn()`` as timeit measures it: garbage collection off,
    best of ``repeats`` runs, so scheduler preemption is not charged to the solver."""
    gc_was_on = gc.isenabled()
    gc.disable()
    try:
        best = float("inf")
        for _ in range(repeats):
            t0 = time.perf_counter()
            out = fn()
            best = min(best, time.perf_counter() - t0)
    finally:
        if gc_was_on:
            gc.enable()
    return best, out
