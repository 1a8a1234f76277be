"""Finite-difference verification of every analytic gradient.

Central differences with step h compare against the hand-derived
gradients of each loss, both directly on embeddings and end-to-end through
the linear encoder (the weighted composite objective).  Entries smaller
than an absolute floor are compared absolutely, everything else
relatively.
"""

import time

import numpy as np

from .core import EmbeddingBatch
from .encoder import DualEncoderModel, SparseVector, accumulate_weight_grad
from .losses import (
    JointLossWeights,
    MixedBatch,
    PairSet,
    ir_loss,
    joint_loss,
    lang_cl_loss,
    sema_cl_loss,
)

DEFAULT_H = 1e-6
DEFAULT_TOL = 1e-6
ABS_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# independent reference implementations, evaluated in extended precision
#
# These share no code with the production losses: direct exponentials over
# a plainly computed similarity matrix, no logsumexp shifting.  Extended
# precision keeps the rounding noise of the central differences far below
# the 1e-6 tolerance; entries whose relative error still lands near the
# tolerance are re-verified with a 40-digit mpmath evaluation of the same
# central difference.


def _ref_sims(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x = x.astype(np.longdouble)
    y = y.astype(np.longdouble)
    xn = x / np.sqrt((x * x).sum(axis=1))[:, None]
    yn = y / np.sqrt((y * y).sum(axis=1))[:, None]
    return xn @ yn.T


def ref_ir_value(q: np.ndarray, p: np.ndarray) -> np.longdouble:
    n = q.shape[0]
    E = np.exp(_ref_sims(q, p))
    return -np.log(np.diag(E) / E.sum(axis=1)).sum() / n


def ref_sema_value(z: np.ndarray, pair_list, tau: float) -> np.longdouble:
    m = z.shape[0]
    E = np.exp(_ref_sims(z, z) / np.longdouble(tau))
    total = np.longdouble(0)
    for i, j in pair_list:
        for a, b in ((i, j), (j, i)):
            den = E[a].sum() - E[a, a]
            total -= np.log(E[a, b] / den)
    return total / m


def ref_lang_value(z: np.ndarray, pair_list, extras) -> np.longdouble:
    members = sorted({i for p in pair_list for i in p}) + sorted(extras)
    E = np.exp(_ref_sims(z, z))
    total = np.longdouble(0)
    count = 0
    for i, j in pair_list:
        for k in members:
            if k in (i, j):
                continue
            e1, e2 = E[i, k], E[j, k]
            total -= np.log(e1 / (e1 + e2)) + np.log(e2 / (e1 + e2))
            count += 1
    return total / count


# mpmath twins for borderline-entry refinement


def _mp_cos(u, v):
    import mpmath as mp

    dot = mp.fsum(mp.mpf(a) * mp.mpf(b) for a, b in zip(u, v))
    nu = mp.sqrt(mp.fsum(mp.mpf(a) ** 2 for a in u))
    nv = mp.sqrt(mp.fsum(mp.mpf(b) ** 2 for b in v))
    return dot / (nu * nv)


def mp_ir_value(q, p):
    import mpmath as mp

    n = len(q)
    total = mp.mpf(0)
    for i in range(n):
        den = mp.fsum(mp.exp(_mp_cos(q[i], p[j])) for j in range(n))
        total -= mp.log(mp.exp(_mp_cos(q[i], p[i])) / den)
    return total / n


def mp_sema_value(z, pair_list, tau):
    import mpmath as mp

    m = len(z)
    tau = mp.mpf(tau)
    total = mp.mpf(0)
    for i, j in pair_list:
        for a, b in ((i, j), (j, i)):
            den = mp.fsum(
                mp.exp(_mp_cos(z[a], z[k]) / tau) for k in range(m) if k != a
            )
            total -= mp.log(mp.exp(_mp_cos(z[a], z[b]) / tau) / den)
    return total / m


def mp_lang_value(z, pair_list, extras):
    import mpmath as mp

    members = sorted({i for p in pair_list for i in p}) + sorted(extras)
    total = mp.mpf(0)
    count = 0
    for i, j in pair_list:
        for k in members:
            if k in (i, j):
                continue
            e1 = mp.exp(_mp_cos(z[i], z[k]))
            e2 = mp.exp(_mp_cos(z[j], z[k]))
            total -= mp.log(e1 / (e1 + e2)) + mp.log(e2 / (e1 + e2))
            count += 1
    return total / count


def central_diff(f, x: np.ndarray, h: float = DEFAULT_H) -> np.ndarray:
    """Central finite differences of scalar f over every entry of x."""
    g = np.zeros(x.shape, dtype=np.longdouble)
    flat = x.ravel()
    gf = g.ravel()
    h = np.longdouble(h)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        xp = np.longdouble(flat[i])  # the step actually representable in the input
        fp = np.longdouble(f(x))
        flat[i] = orig - h
        xm = np.longdouble(flat[i])
        fm = np.longdouble(f(x))
        flat[i] = orig
        gf[i] = (fp - fm) / (xp - xm)
    return g.astype(np.float64)


def rel_errs(analytic, numeric, abs_floor: float = ABS_FLOOR) -> np.ndarray:
    """Per-entry relative errors; tiny entries are compared absolutely."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n)
    return np.where(scale >= abs_floor, err / np.maximum(scale, abs_floor), err)


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                abs_floor: float = ABS_FLOOR) -> float:
    """Worst-case relative error; tiny entries are compared absolutely."""
    rel = rel_errs(analytic, numeric, abs_floor)
    return float(rel.max()) if rel.size else 0.0


def refined_max_err(analytic, numeric, x: np.ndarray, mp_f, h=DEFAULT_H,
                    tol: float = DEFAULT_TOL) -> float:
    """Worst-case error with 40-digit re-evaluation of borderline entries.

    Extended-precision central differences carry ~1e-13 absolute rounding
    noise, which can read as >1e-6 relative on gradient entries just above
    the absolute floor.  Entries whose error exceeds tol/2 get their finite
    difference recomputed through the mpmath reference, which settles
    whether the discrepancy was oracle noise or a real gradient error.
    """
    import mpmath as mp

    a = np.asarray(analytic, dtype=np.float64).ravel()
    nvec = np.asarray(numeric, dtype=np.float64).ravel().copy()
    rel = rel_errs(a, nvec)
    flagged = np.flatnonzero(rel > 0.5 * tol)
    if flagged.size:
        flat = x.ravel()
        with mp.workdps(40):
            for i in flagged:
                orig = flat[i]
                flat[i] = orig + h
                xp = mp.mpf(float(flat[i]))
                fp = mp_f(x)
                flat[i] = orig - h
                xm = mp.mpf(float(flat[i]))
                fm = mp_f(x)
                flat[i] = orig
                nvec[i] = float((fp - fm) / (xp - xm))
        rel = rel_errs(a, nvec)
    return float(rel.max()) if rel.size else 0.0


def _maybe_corrupt(grads: np.ndarray, corrupt: bool) -> np.ndarray:
    if corrupt:
        grads = grads.copy()
        grads.flat[0] += 1e-3
    return grads


def check_ir(rng, n: int, d: int, h=DEFAULT_H, corrupt=False) -> float:
    q = rng.normal(size=(n, d))
    p = rng.normal(size=(n, d))
    out = ir_loss(EmbeddingBatch(q), EmbeddingBatch(p))
    stacked = np.vstack([q, p])
    num = central_diff(lambda x: ref_ir_value(x[:n], x[n:]), stacked, h)
    return refined_max_err(
        _maybe_corrupt(out.grads, corrupt), num, stacked,
        lambda x: mp_ir_value(x[:n], x[n:]), h,
    )


def check_sema(rng, n_pairs: int, d: int, tau: float = 0.1, h=DEFAULT_H,
               corrupt=False) -> float:
    m = 2 * n_pairs
    z = rng.normal(size=(m, d))
    pairs = PairSet([(2 * t, 2 * t + 1) for t in range(n_pairs)])
    out = sema_cl_loss(EmbeddingBatch(z), pairs, tau)
    num = central_diff(lambda x: ref_sema_value(x, pairs.pairs, tau), z, h)
    return refined_max_err(
        _maybe_corrupt(out.grads, corrupt), num, z,
        lambda x: mp_sema_value(x, pairs.pairs, tau), h,
    )


def check_lang(rng, n_pairs: int, n_extras: int, d: int, h=DEFAULT_H,
               corrupt=False) -> float:
    m = 2 * n_pairs + n_extras
    z = rng.normal(size=(m, d))
    pairs = PairSet([(2 * t, 2 * t + 1) for t in range(n_pairs)])
    extras = list(range(2 * n_pairs, m))
    out = lang_cl_loss(MixedBatch(EmbeddingBatch(z), pairs, extras))
    num = central_diff(lambda x: ref_lang_value(x, pairs.pairs, extras), z, h)
    return refined_max_err(
        _maybe_corrupt(out.grads, corrupt), num, z,
        lambda x: mp_lang_value(x, pairs.pairs, extras), h,
    )


def _random_features(rng, d_feat: int, n_active: int = 6) -> SparseVector:
    idx = np.sort(rng.choice(d_feat, size=n_active, replace=False)).astype(np.int64)
    vals = rng.normal(size=n_active)
    vals /= np.linalg.norm(vals)
    return SparseVector(idx, vals)


def check_composite(rng, n: int, d_feat: int = 48, d_emb: int = 6,
                    w: JointLossWeights | None = None, h=DEFAULT_H,
                    n_entries: int = 10, corrupt=False) -> float:
    """Joint objective through the linear towers, FD on sampled weight entries."""
    if w is None:
        w = JointLossWeights(0.01, 0.001)
    model = DualEncoderModel.initialize(
        int(rng.integers(1 << 31)), d_feat=d_feat, d_emb=d_emb
    )
    feats_q = [_random_features(rng, d_feat) for _ in range(n)]
    feats_p = [_random_features(rng, d_feat) for _ in range(n)]
    feats_sema = [_random_features(rng, d_feat) for _ in range(2 * n)]
    feats_lang = [_random_features(rng, d_feat) for _ in range(2 * n + 2)]
    pairs = PairSet([(2 * t, 2 * t + 1) for t in range(n)])
    extras = [2 * n, 2 * n + 1]
    tau = 0.1

    def forward_and_grads():
        enc_q, enc_p = model.query_encoder, model.passage_encoder
        qi = np.array([enc_q.encode(f) for f in feats_q])
        pi = np.array([enc_p.encode(f) for f in feats_p])
        zs = np.array([enc_p.encode(f) for f in feats_sema])
        zl = np.array([enc_p.encode(f) for f in feats_lang])
        out_ir = ir_loss(EmbeddingBatch(qi), EmbeddingBatch(pi))
        out_sema = sema_cl_loss(EmbeddingBatch(zs), pairs, tau)
        out_lang = lang_cl_loss(MixedBatch(EmbeddingBatch(zl), pairs, extras))
        value = out_ir.value + w.w_s * out_sema.value + w.w_l * out_lang.value
        g_q = np.zeros_like(enc_q.W)
        g_p = np.zeros_like(enc_p.W)
        for i in range(n):
            accumulate_weight_grad(g_q, feats_q[i], out_ir.grads[i])
            accumulate_weight_grad(g_p, feats_p[i], out_ir.grads[n + i])
        for i, f in enumerate(feats_sema):
            accumulate_weight_grad(g_p, f, w.w_s * out_sema.grads[i])
        for i, f in enumerate(feats_lang):
            accumulate_weight_grad(g_p, f, w.w_l * out_lang.grads[i])
        return value, g_q, g_p

    def ref_encode(W, feats):
        Wl = W.astype(np.longdouble)
        return np.array(
            [Wl[:, f.indices] @ f.values.astype(np.longdouble) for f in feats]
        )

    def ref_forward():
        qi = ref_encode(model.query_encoder.W, feats_q)
        pi = ref_encode(model.passage_encoder.W, feats_p)
        zs = ref_encode(model.passage_encoder.W, feats_sema)
        zl = ref_encode(model.passage_encoder.W, feats_lang)
        return (
            ref_ir_value(qi, pi)
            + np.longdouble(w.w_s) * ref_sema_value(zs, pairs.pairs, tau)
            + np.longdouble(w.w_l) * ref_lang_value(zl, pairs.pairs, extras)
        )

    def mp_encode(W, feats):
        import mpmath as mp

        return [
            [
                mp.fsum(
                    mp.mpf(float(W[r, c])) * mp.mpf(float(v))
                    for c, v in zip(f.indices, f.values)
                )
                for r in range(d_emb)
            ]
            for f in feats
        ]

    def mp_forward():
        import mpmath as mp

        qi = mp_encode(model.query_encoder.W, feats_q)
        pi = mp_encode(model.passage_encoder.W, feats_p)
        zs = mp_encode(model.passage_encoder.W, feats_sema)
        zl = mp_encode(model.passage_encoder.W, feats_lang)
        return (
            mp_ir_value(qi, pi)
            + mp.mpf(w.w_s) * mp_sema_value(zs, pairs.pairs, tau)
            + mp.mpf(w.w_l) * mp_lang_value(zl, pairs.pairs, extras)
        )

    _, g_q, g_p = forward_and_grads()
    analytic, numeric, entries = [], [], []
    for tower, g in (("q", g_q), ("p", g_p)):
        W = model.query_encoder.W if tower == "q" else model.passage_encoder.W
        rows = rng.integers(d_emb, size=n_entries)
        cols = rng.integers(d_feat, size=n_entries)
        for r, c in zip(rows, cols):
            orig = W[r, c]
            W[r, c] = orig + h
            xp = np.longdouble(W[r, c])
            fp = ref_forward()
            W[r, c] = orig - h
            xm = np.longdouble(W[r, c])
            fm = ref_forward()
            W[r, c] = orig
            analytic.append(g[r, c])
            numeric.append(float((fp - fm) / (xp - xm)))
            entries.append((W, r, c))
    analytic = np.array(analytic)
    if corrupt:
        analytic = analytic + 1e-3
    numeric = np.array(numeric)
    rel = rel_errs(analytic, numeric)
    flagged = np.flatnonzero(rel > 0.5 * DEFAULT_TOL)
    if flagged.size:
        import mpmath as mp

        with mp.workdps(40):
            for i in flagged:
                W, r, c = entries[i]
                orig = W[r, c]
                W[r, c] = orig + h
                xp = mp.mpf(float(W[r, c]))
                fp = mp_forward()
                W[r, c] = orig - h
                xm = mp.mpf(float(W[r, c]))
                fm = mp_forward()
                W[r, c] = orig
                numeric[i] = float((fp - fm) / (xp - xm))
    return max_rel_err(analytic, numeric)


def run_gradcheck(sizes=(2, 4, 8), trials: int = 100, tolerance: float = DEFAULT_TOL,
                  seed: int = 0, composite_trials: int = 5, corrupt=False) -> dict:
    """Full finite-difference suite; returns a per-loss report.

    The composite check is far more expensive per instance (each sampled
    weight entry re-runs all three losses), so it runs composite_trials
    instances per size.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    t0 = time.time()
    report = {"tolerance": tolerance, "losses": {}}
    checks = {
        "ir_loss": lambda n: check_ir(rng, n, 8, corrupt=corrupt),
        "sema_cl_loss": lambda n: check_sema(rng, n, 8, corrupt=corrupt),
        "lang_cl_loss": lambda n: check_lang(rng, n, 2, 8, corrupt=corrupt),
        "composite": lambda n: check_composite(rng, n, corrupt=corrupt),
    }
    all_pass = True
    for name, fn in checks.items():
        worst = 0.0
        for n in sizes:
            reps = composite_trials if name == "composite" else trials
            for _ in range(reps):
                worst = max(worst, fn(n))
        ok = worst <= tolerance
        all_pass &= ok
        report["losses"][name] = {"worst_rel_err": worst, "pass": ok}
    report["pass"] = all_pass
    report["elapsed_s"] = time.time() - t0
    return report
