"""Compiled trajectory loops.

Both kernels mutate ``psi`` in place, append jump events to preallocated
buffers and return ``(status, step, n_events, n_samples)`` so the caller
can grow buffers and resume.  Event times are stored as integer step
counts: an event recorded with step ``k`` happened in the step ending at
``k * dt``.
"""

import numpy as np
from numba import njit

DONE = 0
EVENTS_FULL = 1
STEP_TOO_LARGE = 3
DEGENERATE = 4


@njit(cache=True, nogil=True)
def _norm_sq(v):
    s = 0.0
    for a in range(v.shape[0]):
        s += v[a].real * v[a].real + v[a].imag * v[a].imag
    return s


@njit(cache=True, nogil=True)
def _matvec(m, v, out):
    n = v.shape[0]
    for a in range(n):
        acc = 0j
        for b in range(n):
            acc += m[a, b] * v[b]
        out[a] = acc


@njit(cache=True, nogil=True)
def _reset(psi, pre, reset_a, reset_b):
    # atom 1 counts as the bright one unless atom 1 is more likely shelved
    shelved1 = 0.0
    shelved2 = 0.0
    for m in range(3):
        z = pre[3 + m]
        shelved1 += z.real * z.real + z.imag * z.imag
        z = pre[3 * m + 1]
        shelved2 += z.real * z.real + z.imag * z.imag
    src = reset_a if shelved2 >= shelved1 else reset_b
    for a in range(psi.shape[0]):
        psi[a] = src[a]


@njit(cache=True, nogil=True)
def _record_sample(samples, n_samp, psi):
    s = _norm_sq(psi)
    for a in range(psi.shape[0]):
        samples[n_samp, a] = (psi[a].real * psi[a].real + psi[a].imag * psi[a].imag) / s


@njit(cache=True, nogil=True)
def euler_run(
    psi, s_rows, s_cols, s_vals, g_rows, g_cols, g_vals,
    ops, rates, is_det, reset_a, reset_b,
    dt, step0, n_steps, gen, jumps, reprepare, max_events, sample_every,
    ev_step, ev_chan, n_ev0, samples, n_samp0,
):
    """First-order stepper: one uniform per step partitions [0, 1) into channels."""
    dim = psi.shape[0]
    n_ch = ops.shape[0]
    tmp = np.empty(dim, dtype=np.complex128)
    pre = np.empty(dim, dtype=np.complex128)
    k = step0
    n_ev = n_ev0
    n_samp = n_samp0
    cap = ev_step.shape[0]
    while k < n_steps:
        if n_ev >= cap:
            return EVENTS_FULL, k, n_ev, n_samp
        chosen = -1
        if jumps:
            p_tot = 0.0
            for q in range(g_rows.shape[0]):
                z = psi[g_rows[q]].conjugate() * g_vals[q] * psi[g_cols[q]]
                p_tot += z.real
            p_tot *= dt
            if p_tot >= 1.0:
                return STEP_TOO_LARGE, k, n_ev, n_samp
            u = gen.random()
            if u < p_tot:
                cum = 0.0
                for c in range(n_ch):
                    _matvec(ops[c], psi, tmp)
                    cum += rates[c] * dt * _norm_sq(tmp)
                    if u < cum:
                        chosen = c
                        break
        if chosen >= 0:
            nrm = _norm_sq(tmp)
            if nrm <= 0.0:
                return DEGENERATE, k, n_ev, n_samp
            ev_step[n_ev] = k + 1
            ev_chan[n_ev] = chosen
            n_ev += 1
            if reprepare and not is_det[chosen]:
                for a in range(dim):
                    pre[a] = psi[a]
                _reset(psi, pre, reset_a, reset_b)
            else:
                inv = 1.0 / np.sqrt(nrm)
                for a in range(dim):
                    psi[a] = tmp[a] * inv
        else:
            for a in range(dim):
                tmp[a] = 0.0
            for q in range(s_rows.shape[0]):
                tmp[s_rows[q]] += s_vals[q] * psi[s_cols[q]]
            nrm = _norm_sq(tmp)
            if nrm <= 0.0:
                return DEGENERATE, k, n_ev, n_samp
            inv = 1.0 / np.sqrt(nrm)
            for a in range(dim):
                psi[a] = tmp[a] * inv
        k += 1
        if sample_every > 0 and k % sample_every == 0:
            _record_sample(samples, n_samp, psi)
            n_samp += 1
        if max_events >= 0 and n_ev >= max_events:
            break
    return DONE, k, n_ev, n_samp


@njit(cache=True, nogil=True)
def _advance(powers, psi, n, out, scratch):
    for a in range(psi.shape[0]):
        out[a] = psi[a]
    j = 0
    while n > 0:
        if n & 1:
            _matvec(powers[j], out, scratch)
            for a in range(psi.shape[0]):
                out[a] = scratch[a]
        n >>= 1
        j += 1


@njit(cache=True, nogil=True)
def exact_run(
    psi, powers, ops, rates, is_det, reset_a, reset_b,
    step0, n_steps, gen, jumps, reprepare, max_events, sample_every,
    threshold, ev_step, ev_chan, n_ev0, samples, n_samp0,
):
    """Waiting-time unraveling with the exact no-jump propagator.

    ``powers[j]`` is the no-jump propagator over ``2**j`` steps.  A jump
    fires at the first grid step where the squared norm of the no-jump
    evolved state drops to the uniform threshold stored in
    ``threshold[0]`` (negative means "draw a fresh one").  The state is
    renormalized after every accepted advance and the threshold rescaled
    with it.
    """
    dim = psi.shape[0]
    n_ch = ops.shape[0]
    n_pow = powers.shape[0]
    macro = 1 << (n_pow - 1)
    phi = np.empty(dim, dtype=np.complex128)
    cur = np.empty(dim, dtype=np.complex128)
    cand = np.empty(dim, dtype=np.complex128)
    scratch = np.empty(dim, dtype=np.complex128)
    tmp = np.empty(dim, dtype=np.complex128)
    weights = np.empty(n_ch)
    k = step0
    n_ev = n_ev0
    n_samp = n_samp0
    cap = ev_step.shape[0]
    while k < n_steps:
        if n_ev >= cap:
            return EVENTS_FULL, k, n_ev, n_samp
        if jumps and threshold[0] < 0.0:
            threshold[0] = 1.0 - gen.random()
        target = min(k + macro, n_steps)
        if sample_every > 0:
            target = min(target, (k // sample_every + 1) * sample_every)
        n = target - k
        _advance(powers, psi, n, phi, scratch)
        nrm = _norm_sq(phi)
        if not jumps or nrm > threshold[0]:
            if nrm <= 0.0:
                return DEGENERATE, k, n_ev, n_samp
            inv = 1.0 / np.sqrt(nrm)
            for a in range(dim):
                psi[a] = phi[a] * inv
            if jumps:
                threshold[0] /= nrm
            k = target
        else:
            # largest s in [0, n-1] whose norm is still above threshold
            for a in range(dim):
                cur[a] = psi[a]
            s = 0
            for j in range(n_pow - 1, -1, -1):
                size = 1 << j
                if s + size <= n - 1:
                    _matvec(powers[j], cur, cand)
                    if _norm_sq(cand) > threshold[0]:
                        for a in range(dim):
                            cur[a] = cand[a]
                        s += size
            _matvec(powers[0], cur, phi)
            total = 0.0
            for c in range(n_ch):
                _matvec(ops[c], phi, tmp)
                weights[c] = rates[c] * _norm_sq(tmp)
                total += weights[c]
            if total <= 0.0:
                return DEGENERATE, k + s + 1, n_ev, n_samp
            u = gen.random() * total
            chosen = n_ch - 1
            cum = 0.0
            for c in range(n_ch):
                cum += weights[c]
                if u < cum:
                    chosen = c
                    break
            while weights[chosen] <= 0.0:
                chosen -= 1
            k = k + s + 1
            ev_step[n_ev] = k
            ev_chan[n_ev] = chosen
            n_ev += 1
            threshold[0] = -1.0
            if reprepare and not is_det[chosen]:
                _reset(psi, phi, reset_a, reset_b)
            else:
                _matvec(ops[chosen], phi, tmp)
                inv = 1.0 / np.sqrt(_norm_sq(tmp))
                for a in range(dim):
                    psi[a] = tmp[a] * inv
        if sample_every > 0 and k % sample_every == 0:
            _record_sample(samples, n_samp, psi)
            n_samp += 1
        if max_events >= 0 and n_ev >= max_events:
            break
    return DONE, k, n_ev, n_samp
