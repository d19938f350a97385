# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled episode kernel; mirrors ``_kernels_py.block_episode`` operation for operation."""

from libc.math cimport remainder, tanh, fabs, M_PI

cdef double DT = 0.05
cdef double SUCCESS_TOL = 0.1
cdef double DROP_OMEGA = 20.0
cdef double SUCCESS_BONUS = 5.0
cdef int MAX_SUCCESSES = 50
cdef double TWO_PI = 2.0 * M_PI
cdef int MAX_HIDDEN = 1024
cdef int MAX_LATENCY = 64

POLICY_MLP = 0
POLICY_PD = 1
TERM_MAX_SUCCESSES = 0
TERM_DROP = 1
TERM_TIMEOUT = 2


cdef inline double _wrap(double x) noexcept nogil:
    cdef double y = remainder(x, TWO_PI)
    if y <= -M_PI:
        y += TWO_PI
    return y


cdef inline double _sgn(double x) noexcept nogil:
    return <double>((x > 0.0) - (x < 0.0))


cdef double _act(int kind, const double[::1] w, int hidden, double theta, double omega,
                 double goal, double* h) noexcept nogil:
    cdef double u, acc
    cdef int j, base
    if kind == 1:
        u = w[0] * _wrap(goal - theta) - w[1] * omega
        if u > 1.0:
            return 1.0
        if u < -1.0:
            return -1.0
        return u
    for j in range(hidden):
        acc = w[3 * hidden + j]
        acc += w[3 * j] * theta
        acc += w[3 * j + 1] * omega
        acc += w[3 * j + 2] * goal
        h[j] = tanh(acc)
    base = 4 * hidden
    acc = w[base + hidden]
    for j in range(hidden):
        acc += w[base + j] * h[j]
    return tanh(acc)


cdef (int, int, int) _episode(const double[::1] phys, const double[::1] eff, int kind,
                              const double[::1] w, int hidden, int horizon,
                              const double[::1] goal_tape, const double[::1] normals,
                              const double[::1] uniforms, double[:, ::1] out_states,
                              double[::1] out_actions, double[::1] out_rewards) noexcept nogil:
    cdef double inertia = phys[0], damping = phys[1], torque_scale = phys[2]
    cdef double friction = phys[3], gravity_bias = phys[4]
    cdef int latency = <int>eff[0]
    cdef double backlash = eff[1], noise = eff[2], kappa = eff[3], wind_sigma = eff[4]
    cdef double freeze_prob = eff[5]
    cdef int freeze_duration = <int>eff[6]
    cdef double h[1024]
    cdef double fifo[64]
    cdef int fidx = 0, gi = 2, frozen_left = 0, successes = 0, term = 2, t = 0, i
    cdef double theta, omega, goal, a, delayed, m, xi, wcur, wind = 0.0, u, torque, err

    for i in range(MAX_LATENCY):
        fifo[i] = 0.0
    theta = _wrap(goal_tape[0])
    goal = _wrap(goal_tape[1])
    omega = 0.0
    while True:
        out_states[t, 0] = theta
        out_states[t, 1] = omega
        out_states[t, 2] = goal
        a = _act(kind, w, hidden, theta, omega, goal, h)
        if a > 1.0:
            a = 1.0
        elif a < -1.0:
            a = -1.0
        out_actions[t] = a

        if latency > 0:
            delayed = fifo[fidx]
            fifo[fidx] = a
            fidx = (fidx + 1) % latency
            a = delayed
        m = fabs(a) - backlash
        a = _sgn(a) * (m if m > 0.0 else 0.0)
        a = a + noise * normals[2 * t]
        xi = normals[2 * t + 1]
        wcur = wind
        wind = (1.0 - kappa) * wcur + wind_sigma * xi
        u = uniforms[t]
        if frozen_left == 0 and u < freeze_prob:
            frozen_left = freeze_duration

        t += 1
        if frozen_left > 0:
            frozen_left -= 1
            out_rewards[t - 1] = -fabs(_wrap(theta - goal))
            if t >= horizon:
                break
            continue

        if a > 1.0:
            a = 1.0
        elif a < -1.0:
            a = -1.0
        torque = torque_scale * a - damping * omega - friction * _sgn(omega) - gravity_bias + wcur
        omega = omega + DT * torque / inertia
        theta = _wrap(theta + DT * omega)
        err = _wrap(theta - goal)
        if fabs(err) < SUCCESS_TOL:
            out_rewards[t - 1] = -fabs(err) + SUCCESS_BONUS
            successes += 1
            goal = _wrap(goal_tape[gi])
            gi += 1
        else:
            out_rewards[t - 1] = -fabs(err) + 0.0
        if successes >= MAX_SUCCESSES:
            term = 0
            break
        if fabs(omega) > DROP_OMEGA:
            term = 1
            break
        if t >= horizon:
            break

    out_states[t, 0] = theta
    out_states[t, 1] = omega
    out_states[t, 2] = goal
    return t, successes, term


def block_episode(const double[::1] phys, const double[::1] eff, int kind, const double[::1] w,
                  int hidden, int horizon, const double[::1] goal_tape, const double[::1] normals,
                  const double[::1] uniforms, double[:, ::1] out_states, double[::1] out_actions,
                  double[::1] out_rewards):
    if hidden > MAX_HIDDEN or hidden < 0:
        raise ValueError(f"hidden size must be in [0, {MAX_HIDDEN}]")
    if <int>eff[0] > MAX_LATENCY or eff[0] < 0:
        raise ValueError(f"latency must be in [0, {MAX_LATENCY}]")
    if out_states.shape[0] < horizon + 1 or out_actions.shape[0] < horizon or out_rewards.shape[0] < horizon:
        raise ValueError("output buffers shorter than the horizon")
    if normals.shape[0] < 2 * horizon or uniforms.shape[0] < horizon or goal_tape.shape[0] < 2 + MAX_SUCCESSES:
        raise ValueError("random tapes shorter than required")
    cdef (int, int, int) res
    with nogil:
        res = _episode(phys, eff, kind, w, hidden, horizon, goal_tape, normals, uniforms,
                       out_states, out_actions, out_rewards)
    return res[0], res[1], res[2]
