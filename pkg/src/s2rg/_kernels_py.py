"""Pure-Python episode kernel.

Reference for ``_kernels.pyx``: both evaluate the same floating point
operations in the same order, so results are bit-identical.
"""

import math

DT = 0.05
SUCCESS_TOL = 0.1
DROP_OMEGA = 20.0
SUCCESS_BONUS = 5.0
MAX_SUCCESSES = 50
TWO_PI = 2.0 * math.pi
PI = math.pi

POLICY_MLP = 0
POLICY_PD = 1

TERM_MAX_SUCCESSES = 0
TERM_DROP = 1
TERM_TIMEOUT = 2


def _wrap(x):
    y = math.remainder(x, TWO_PI)
    if y <= -PI:
        y += TWO_PI
    return y


def _act(kind, w, hidden, theta, omega, goal, h):
    if kind == POLICY_PD:
        u = w[0] * _wrap(goal - theta) - w[1] * omega
        if u > 1.0:
            return 1.0
        if u < -1.0:
            return -1.0
        return u
    x0, x1, x2 = theta, omega, goal
    for j in range(hidden):
        acc = w[3 * hidden + j]
        acc += w[3 * j] * x0
        acc += w[3 * j + 1] * x1
        acc += w[3 * j + 2] * x2
        h[j] = math.tanh(acc)
    base = 4 * hidden
    acc = w[base + hidden]
    for j in range(hidden):
        acc += w[base + j] * h[j]
    return math.tanh(acc)


def block_episode(phys, eff, kind, w, hidden, horizon, goal_tape, normals, uniforms,
                  out_states, out_actions, out_rewards):
    """Run one BlockRotate2D episode with custom physics.

    ``phys`` = (inertia, damping, torque_scale, friction, gravity_bias);
    ``eff`` = (latency, backlash, noise, wind_kappa, wind_sigma,
    freeze_prob, freeze_duration). ``goal_tape`` supplies the initial angle,
    the initial goal and then one value per goal resample. Returns
    ``(T, successes, termination_code)``.
    """
    inertia, damping, torque_scale, friction, gravity_bias = (float(v) for v in phys[:5])
    latency = int(eff[0])
    backlash, noise, kappa, wind_sigma, freeze_prob = (float(v) for v in eff[1:6])
    freeze_duration = int(eff[6])
    w = [float(v) for v in w]
    h = [0.0] * max(hidden, 1)
    fifo = [0.0] * max(latency, 1)
    fidx = 0

    theta = _wrap(float(goal_tape[0]))
    goal = _wrap(float(goal_tape[1]))
    gi = 2
    omega = 0.0
    wind = 0.0
    frozen_left = 0
    successes = 0
    term = TERM_TIMEOUT
    t = 0
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
        sgn = (a > 0.0) - (a < 0.0)
        m = abs(a) - backlash
        a = sgn * (m if m > 0.0 else 0.0)
        a = a + noise * float(normals[2 * t])
        xi = float(normals[2 * t + 1])
        wcur = wind
        wind = (1.0 - kappa) * wcur + wind_sigma * xi
        u = float(uniforms[t])
        if frozen_left == 0 and u < freeze_prob:
            frozen_left = freeze_duration

        t += 1
        if frozen_left > 0:
            frozen_left -= 1
            out_rewards[t - 1] = -abs(_wrap(theta - goal))
            if t >= horizon:
                break
            continue

        if a > 1.0:
            a = 1.0
        elif a < -1.0:
            a = -1.0
        sgn = (omega > 0.0) - (omega < 0.0)
        torque = torque_scale * a - damping * omega - friction * sgn - gravity_bias + wcur
        omega = omega + DT * torque / inertia
        theta = _wrap(theta + DT * omega)
        err = _wrap(theta - goal)
        if abs(err) < SUCCESS_TOL:
            out_rewards[t - 1] = -abs(err) + SUCCESS_BONUS
            successes += 1
            goal = _wrap(float(goal_tape[gi]))
            gi += 1
        else:
            out_rewards[t - 1] = -abs(err) + 0.0
        if successes >= MAX_SUCCESSES:
            term = TERM_MAX_SUCCESSES
            break
        if abs(omega) > DROP_OMEGA:
            term = TERM_DROP
            break
        if t >= horizon:
            break

    out_states[t, 0] = theta
    out_states[t, 1] = omega
    out_states[t, 2] = goal
    return t, successes, term
