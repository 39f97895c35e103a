"""
Numba kernels for the detuning × depth lattice

Scalar helpers implement one exact step of a single Bloch node; the lattice
kernels apply the same arithmetic to whole (nz, n_delta) arrays in place.

Each lattice kernel is compiled twice: a prange-parallel variant used by
single-run callers, and a serial variant used when several sweep workers
call into numba from different threads (the default workqueue threading
layer refuses concurrent parallel launches).
"""
import math

import numpy as np
from numba import njit, prange


SMALL_PHASE = 1e-6


@njit(cache=True, nogil=True)
def rotate_components(u, v, w, omega, delta, tau):
    """Exact rotation of (u, v, w) about the torque axis (omega, 0, delta)"""
    if omega == 0.0:
        # Free precession, w untouched
        cd = math.cos(delta * tau)
        sd = math.sin(delta * tau)
        return u * cd - v * sd, v * cd + u * sd, w

    rate = math.sqrt(omega * omega + delta * delta)
    theta = rate * tau
    nx = omega / rate
    nz = delta / rate
    ct = math.cos(theta)
    st = math.sin(theta)
    k = (1.0 - ct) * (nx * u + nz * w)

    u_new = u * ct - nz * v * st + nx * k
    v_new = v * ct + (nz * u - nx * w) * st
    w_new = w * ct + nx * v * st + nz * k
    return u_new, v_new, w_new


@njit(cache=True, nogil=True)
def phase_factors(delta, tau):
    """
    Per-detuning constants of one step of length tau

    Returns (cos Δτ, sin Δτ, sin(Δτ)/Δ, (1 - cos Δτ)/Δ). The last two use
    their series below SMALL_PHASE so that Δ = 0 needs no division.
    """
    x = delta * tau
    cd = math.cos(x)
    sd = math.sin(x)
    if abs(x) < SMALL_PHASE:
        s1 = tau * (1.0 - x * x / 6.0)
        s2 = tau * x * 0.5 * (1.0 - x * x / 12.0)
    else:
        s1 = sd / delta
        h = math.sin(0.5 * x)
        s2 = 2.0 * h * h / delta
    return cd, sd, s1, s2


@njit(cache=True, nogil=True)
def convolve_components(c, s, omega, delta, tau):
    """Advance the field-convolution pair under a constant drive omega"""
    cd, sd, s1, s2 = phase_factors(delta, tau)
    return c * cd - s * sd + omega * s1, s * cd + c * sd + omega * s2


@njit(cache=True)
def step_tables(deltas, tau):
    n = deltas.shape[0]
    cos_d = np.empty(n)
    sin_d = np.empty(n)
    s1 = np.empty(n)
    s2 = np.empty(n)
    for j in range(n):
        a, b, d1, d2 = phase_factors(deltas[j], tau)
        cos_d[j] = a
        sin_d[j] = b
        s1[j] = d1
        s2[j] = d2
    return cos_d, sin_d, s1, s2


def _advance_impl(u, v, w, c, s, omega, deltas, cos_d, sin_d, s1, s2, tau, damping):
    nz, nd = u.shape
    for i in prange(nz):
        om = omega[i]
        for j in range(nd):
            cd = cos_d[j]
            sd = sin_d[j]
            ui = u[i, j]
            vi = v[i, j]
            wi = w[i, j]
            ci = c[i, j]
            si = s[i, j]

            if om == 0.0:
                un = ui * cd - vi * sd
                vn = vi * cd + ui * sd
                wn = wi
            else:
                de = deltas[j]
                rate = math.sqrt(om * om + de * de)
                theta = rate * tau
                nx = om / rate
                nzz = de / rate
                ct = math.cos(theta)
                st = math.sin(theta)
                k = (1.0 - ct) * (nx * ui + nzz * wi)
                un = ui * ct - nzz * vi * st + nx * k
                vn = vi * ct + (nzz * ui - nx * wi) * st
                wn = wi * ct + nx * vi * st + nzz * k

            u[i, j] = un * damping
            v[i, j] = vn * damping
            w[i, j] = wn
            c[i, j] = ci * cd - si * sd + om * s1[j]
            s[i, j] = si * cd + ci * sd + om * s2[j]


def _polarization_impl(u, v, c, s, weights, cos_d, sin_d, renormalize, out):
    nz, nd = u.shape
    for i in prange(nz):
        acc = 0.0
        for j in range(nd):
            if renormalize:
                big_u = u[i, j] + s[i, j]
                big_v = v[i, j] - c[i, j]
            else:
                big_u = u[i, j]
                big_v = v[i, j]
            acc += weights[j] * (big_v * cos_d[j] + big_u * sin_d[j])
        out[i] = acc


def _step_mean_impl(u, v, w, c, s, weights, s1, s2, gain, tau, renormalize, free, load):
    """
    Mean over the coming step of the polarization, split into its drive-free
    part and the coefficient of the (still unknown) step drive

    mean V = [V·sin(Δτ)/Δ + U·(1 - cos Δτ)/Δ]/τ - Ω·(w + 1)·gain, with
    gain = (1 - cos Δτ)/(Δ²τ) and w frozen at the start of the step.
    """
    nz, nd = u.shape
    for i in prange(nz):
        acc = 0.0
        b = 0.0
        for j in range(nd):
            if renormalize:
                big_u = u[i, j] + s[i, j]
                big_v = v[i, j] - c[i, j]
            else:
                big_u = u[i, j]
                big_v = v[i, j]
            acc += weights[j] * (big_v * s1[j] + big_u * s2[j])
            b += weights[j] * (w[i, j] + 1.0) * gain[j]
        free[i] = acc / tau
        load[i] = b


advance_parallel = njit(parallel=True, nogil=True)(_advance_impl)
advance_serial = njit(nogil=True)(_advance_impl)
polarization_parallel = njit(parallel=True, nogil=True)(_polarization_impl)
polarization_serial = njit(nogil=True)(_polarization_impl)
step_mean_parallel = njit(parallel=True, nogil=True)(_step_mean_impl)
step_mean_serial = njit(nogil=True)(_step_mean_impl)


@njit(cache=True, nogil=True)
def field_kernel(input_sample, p, load, attenuation, step_decay, dzeta, out):
    """
    Exponential-kernel trapezoid over depth, written as a prefix recursion

    I_i = e^{-κδζ} I_{i-1} + δζ/2 (e^{-κδζ} P_{i-1} + P_i) equals the
    trapezoid rule of ∫ e^{-κ(ζ_i-ζ')} P(ζ') dζ' on the first i+1 nodes.

    The slab polarization is P_i = p_i - load_i·Ω_i. Ω_i enters its own
    trapezoid term linearly, so each slab is solved in closed form; a zero
    `load` gives the explicit update.
    """
    nz = p.shape[0]
    two_pi = 2.0 * math.pi
    acc = 0.0
    out[0] = input_sample
    prev = p[0] - load[0] * input_sample
    for i in range(1, nz):
        base = step_decay * acc + 0.5 * dzeta * step_decay * prev
        omega = (input_sample * attenuation[i] - (base + 0.5 * dzeta * p[i]) / two_pi) \
            / (1.0 - 0.25 * dzeta * load[i] / math.pi)
        out[i] = omega
        prev = p[i] - load[i] * omega
        acc = base + 0.5 * dzeta * prev
