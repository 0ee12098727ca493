"""Orbit kernels: numba versions and pure-numpy fallbacks.

Doubling-map points are infinite binary expansions stored as uint64 words;
the k-th iterate is the 64-bit window starting at bit k, so iterating is a
shift and never loses precision. Torus points are 64-bit fixed-point pairs
and the automorphism acts by wrapping integer arithmetic, which is exact
mod 1 on the dyadic grid.

All public functions take a term table (see ``observables.TermTable``) as a
tuple of arrays and dispatch on ``_accel.use_numba()``.
"""
import math

import numpy as np

from ._accel import njit, use_numba

TWO_M53 = 2.0 ** -53
TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------- numba side
# Per sample, a row of coordinates is filled first and the observable is then
# evaluated over the whole row; per-step helper calls are measurably slower.

@njit
def _eval_row(xs, ys, n, tc, tf, ta, ts, pc, pd, pp, pa, const, vals):
    for k in range(n):
        x = xs[k]
        y = ys[k]
        for a in range(const.shape[0]):
            vals[k, a] = const[a]
        for t in range(tc.shape[0]):
            arg = TWO_PI * (tf[t, 0] * x + tf[t, 1] * y)
            if ts[t] == 0:
                vals[k, tc[t]] += ta[t] * math.cos(arg)
            else:
                vals[k, tc[t]] += ta[t] * math.sin(arg)
        for t in range(pc.shape[0]):
            c = x if pd[t] == 0 else y
            vals[k, pc[t]] += pa[t] * c ** pp[t]


@njit
def _doubling_row(row, n, xs):
    for k in range(n):
        j = k >> 6
        r = np.uint64(k & 63)
        if r == 0:
            w = row[j]
        else:
            w = (row[j] << r) | (row[j + 1] >> (np.uint64(64) - r))
        xs[k] = float(w >> np.uint64(11)) * TWO_M53


@njit
def _toral_row(X, Y, mat, n, xs, ys):
    a, b, c, d = mat[0], mat[1], mat[2], mat[3]
    for k in range(n):
        xs[k] = float(X >> np.uint64(11)) * TWO_M53
        ys[k] = float(Y >> np.uint64(11)) * TWO_M53
        X, Y = a * X + b * Y, c * X + d * Y


@njit
def _checkpoint_sums(vals, n, checkpoints, out, i):
    # Neumaier-compensated running sums, recorded at each checkpoint length
    ci = 0
    for a in range(vals.shape[1]):
        s = 0.0
        comp = 0.0
        ci = 0
        for k in range(n):
            v = vals[k, a]
            t = s + v
            if abs(s) >= abs(v):
                comp += (s - t) + v
            else:
                comp += (v - t) + s
            s = t
            if ci < checkpoints.shape[0] and k + 1 == checkpoints[ci]:
                out[i, ci, a] = s + comp
                ci += 1


@njit
def _doubling_values_nb(words, n_steps, tc, tf, ta, ts, pc, pd, pp, pa, const, out):
    xs = np.empty(n_steps)
    ys = np.zeros(n_steps)
    for i in range(words.shape[0]):
        _doubling_row(words[i], n_steps, xs)
        _eval_row(xs, ys, n_steps, tc, tf, ta, ts, pc, pd, pp, pa, const, out[i])


@njit
def _toral_values_nb(state, mat, n_steps, tc, tf, ta, ts, pc, pd, pp, pa, const, out):
    xs = np.empty(n_steps)
    ys = np.empty(n_steps)
    for i in range(state.shape[0]):
        _toral_row(state[i, 0], state[i, 1], mat, n_steps, xs, ys)
        _eval_row(xs, ys, n_steps, tc, tf, ta, ts, pc, pd, pp, pa, const, out[i])


@njit
def _doubling_sums_nb(words, checkpoints, tc, tf, ta, ts, pc, pd, pp, pa, const, out):
    n = checkpoints[-1]
    xs = np.empty(n)
    ys = np.zeros(n)
    vals = np.empty((n, const.shape[0]))
    for i in range(words.shape[0]):
        _doubling_row(words[i], n, xs)
        _eval_row(xs, ys, n, tc, tf, ta, ts, pc, pd, pp, pa, const, vals)
        _checkpoint_sums(vals, n, checkpoints, out, i)


@njit
def _toral_sums_nb(state, mat, checkpoints, tc, tf, ta, ts, pc, pd, pp, pa, const, out):
    n = checkpoints[-1]
    xs = np.empty(n)
    ys = np.empty(n)
    vals = np.empty((n, const.shape[0]))
    for i in range(state.shape[0]):
        _toral_row(state[i, 0], state[i, 1], mat, n, xs, ys)
        _eval_row(xs, ys, n, tc, tf, ta, ts, pc, pd, pp, pa, const, vals)
        _checkpoint_sums(vals, n, checkpoints, out, i)


@njit
def _doubling_coords_nb(words, n_steps, out):
    xs = np.empty(n_steps)
    for i in range(words.shape[0]):
        _doubling_row(words[i], n_steps, xs)
        out[i, :, 0] = xs


@njit
def _toral_coords_nb(state, mat, n_steps, out):
    xs = np.empty(n_steps)
    ys = np.empty(n_steps)
    for i in range(state.shape[0]):
        _toral_row(state[i, 0], state[i, 1], mat, n_steps, xs, ys)
        out[i, :, 0] = xs
        out[i, :, 1] = ys


# ---------------------------------------------------------------- numpy side

def _np_window(words, k):
    j, r = k >> 6, np.uint64(k & 63)
    if r == 0:
        return words[:, j]
    return (words[:, j] << r) | (words[:, j + 1] >> (np.uint64(64) - r))


def _np_unit(w):
    return (w >> np.uint64(11)).astype(np.float64) * TWO_M53


def _np_eval(x, y, table):
    tc, tf, ta, ts, pc, pd, pp, pa, const = table
    out = np.empty(x.shape + (const.shape[0],))
    out[:] = const
    for t in range(tc.shape[0]):
        arg = TWO_PI * (tf[t, 0] * x + tf[t, 1] * y)
        out[:, tc[t]] += ta[t] * (np.sin(arg) if ts[t] else np.cos(arg))
    for t in range(pc.shape[0]):
        out[:, pc[t]] += pa[t] * (x if pd[t] == 0 else y) ** pp[t]
    return out


def _np_toral_step(X, Y, mat):
    with np.errstate(over="ignore"):
        return mat[0] * X + mat[1] * Y, mat[2] * X + mat[3] * Y


def _np_doubling_iter(words, n_steps):
    zero = np.zeros(words.shape[0])
    for k in range(n_steps):
        yield _np_unit(_np_window(words, k)), zero


def _np_toral_iter(state, mat, n_steps):
    X, Y = state[:, 0].copy(), state[:, 1].copy()
    for _ in range(n_steps):
        yield _np_unit(X), _np_unit(Y)
        X, Y = _np_toral_step(X, Y, mat)


def _np_values(it, m, n_steps, table):
    out = np.empty((m, n_steps, table[-1].shape[0]))
    for k, (x, y) in enumerate(it):
        out[:, k] = _np_eval(x, y, table)
    return out


def _np_sums(it, m, checkpoints, table):
    d = table[-1].shape[0]
    out = np.empty((m, len(checkpoints), d))
    s = np.zeros((m, d))
    comp = np.zeros((m, d))
    ci = 0
    for k, (x, y) in enumerate(it):
        val = _np_eval(x, y, table)
        t = s + val
        big = np.abs(s) >= np.abs(val)
        comp += np.where(big, (s - t) + val, (val - t) + s)
        s = t
        if ci < len(checkpoints) and k + 1 == checkpoints[ci]:
            out[:, ci] = s + comp
            ci += 1
    return out


# ---------------------------------------------------------------- dispatch

def toral_matrix_words(matrix):
    """Matrix entries as two's-complement uint64 (row-major a, b, c, d)."""
    flat = [int(v) % (1 << 64) for row in matrix for v in row]
    return np.asarray(flat, dtype=np.uint64)


def doubling_values(words, n_steps, table):
    m = words.shape[0]
    if use_numba():
        out = np.empty((m, n_steps, table[-1].shape[0]))
        _doubling_values_nb(words, n_steps, *table, out)
        return out
    return _np_values(_np_doubling_iter(words, n_steps), m, n_steps, table)


def toral_values(state, mat, n_steps, table):
    m = state.shape[0]
    if use_numba():
        out = np.empty((m, n_steps, table[-1].shape[0]))
        _toral_values_nb(state, mat, n_steps, *table, out)
        return out
    return _np_values(_np_toral_iter(state, mat, n_steps), m, n_steps, table)


def doubling_sums(words, checkpoints, table):
    """Unnormalized Birkhoff sums at each checkpoint length."""
    checkpoints = np.asarray(checkpoints, dtype=np.int64)
    m = words.shape[0]
    if use_numba():
        out = np.empty((m, len(checkpoints), table[-1].shape[0]))
        _doubling_sums_nb(words, checkpoints, *table, out)
        return out
    return _np_sums(_np_doubling_iter(words, int(checkpoints[-1])), m, checkpoints, table)


def toral_sums(state, mat, checkpoints, table):
    checkpoints = np.asarray(checkpoints, dtype=np.int64)
    m = state.shape[0]
    if use_numba():
        out = np.empty((m, len(checkpoints), table[-1].shape[0]))
        _toral_sums_nb(state, mat, checkpoints, *table, out)
        return out
    return _np_sums(_np_toral_iter(state, mat, int(checkpoints[-1])), m, checkpoints, table)


def doubling_coords(words, n_steps):
    m = words.shape[0]
    if use_numba():
        out = np.empty((m, n_steps, 1))
        _doubling_coords_nb(words, n_steps, out)
        return out
    return np.stack([x for x, _ in _np_doubling_iter(words, n_steps)], axis=1)[..., None]


def toral_coords(state, mat, n_steps):
    m = state.shape[0]
    if use_numba():
        out = np.empty((m, n_steps, 2))
        _toral_coords_nb(state, mat, n_steps, out)
        return out
    return np.stack([np.stack(xy, axis=-1) for xy in _np_toral_iter(state, mat, n_steps)], axis=1)
