"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written from the problem statements, not
from the library code: the coding oracle minimizes the regularized
reconstruction objective by projected gradient descent with exact line
search, and the pairing oracle re-derives the slot selection rule with
plain modular arithmetic. Keep these free of reidkit imports.
"""
import numpy as np


def locality_weights(x, basis, sigma):
    """d_i = exp((||x - b_i|| - min_j ||x - b_j||) / sigma)."""
    dist = np.sqrt(((basis - x[None, :]) ** 2).sum(axis=1))
    return np.exp((dist - dist.min()) / sigma)


def coding_objective(c, x, basis, lam, d):
    """||x - B'c||^2 + lam * ||d o c||^2 with basis rows as entries."""
    recon = basis.T @ c
    err = x - recon
    return float(err @ err + lam * ((d * c) ** 2).sum())


def pgd_code(x, basis, lam, sigma, iters=20000):
    """Minimize the coding objective over the sum-to-one hyperplane.

    Steepest descent restricted to the constraint plane, with the exact
    minimizing step along each direction (the objective is quadratic, so
    the step has a closed form). Returns the coefficient vector.
    """
    m = basis.shape[0]
    d = locality_weights(x, basis, sigma)
    c = np.full(m, 1.0 / m)
    for _ in range(iters):
        resid = basis.T @ c - x
        grad = 2.0 * (basis @ resid) + 2.0 * lam * (d * d) * c
        gt = grad - grad.mean()  # keep steps inside the plane sum(c) = 1
        denom_vec = basis.T @ gt
        denom = denom_vec @ denom_vec + lam * ((d * gt) ** 2).sum()
        if denom <= 0:
            break
        step = 0.5 * (gt @ gt) / denom
        if step * np.abs(gt).max() < 1e-16:
            break
        c = c - step * gt
    return c


def pgd_code_batch(X, bases, lam, sigma, iters=20000):
    """pgd_code over a stack of instances at once.

    X is (n, dim), bases is (n, m, dim); lam and sigma may be scalars or
    per-instance arrays. All instances run the full iteration budget.
    """
    X = np.asarray(X, dtype=np.float64)
    bases = np.asarray(bases, dtype=np.float64)
    n, m, _ = bases.shape
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (n,))
    dist = np.sqrt(((bases - X[:, None, :]) ** 2).sum(axis=2))
    d = np.exp((dist - dist.min(axis=1, keepdims=True)) / sigma[:, None])
    d2 = d * d
    C = np.full((n, m), 1.0 / m)
    for _ in range(iters):
        resid = np.einsum("nmd,nm->nd", bases, C) - X
        grad = 2.0 * np.einsum("nmd,nd->nm", bases, resid) + 2.0 * lam[:, None] * d2 * C
        gt = grad - grad.mean(axis=1, keepdims=True)
        bv = np.einsum("nmd,nm->nd", bases, gt)
        denom = (bv * bv).sum(axis=1) + lam * (d2 * gt * gt).sum(axis=1)
        num = 0.5 * (gt * gt).sum(axis=1)
        step = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)
        C = C - step[:, None] * gt
    return C


def batch_objectives(C, X, bases, lam, sigma):
    """Objective value of each row of C under its own instance."""
    n = X.shape[0]
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (n,))
    out = np.empty(n)
    for i in range(n):
        d = locality_weights(X[i], bases[i], sigma[i])
        out[i] = coding_objective(C[i], X[i], bases[i], lam[i], d)
    return out


def reference_slot_pairing(probe_slots, gallery_slots):
    """The slot pairing rule, re-derived with bare modular arithmetic.

    Returns the list of (probe, gallery) orientation pairs; an empty list
    means the caller must fall back to random slot sampling.
    """
    gallery = set(gallery_slots)
    chosen = []
    for o in sorted(set(probe_slots)):
        if o in gallery:
            chosen.append((o, o))
            continue
        clockwise = o % 8 + 1
        counter = (o - 2) % 8 + 1
        if clockwise in gallery:
            chosen.append((o, clockwise))
        elif counter in gallery:
            chosen.append((o, counter))
    return chosen


def subsets_of_labels():
    """All 255 non-empty subsets of {1..8} as sorted tuples, mask order."""
    out = []
    for mask in range(1, 256):
        out.append(tuple(o for o in range(1, 9) if mask & (1 << (o - 1))))
    return out
