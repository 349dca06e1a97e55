"""Policy-input and GP-input maps for the hardware systems (unit level only)."""

from __future__ import annotations

from mcpilco.core import ad


def furuta_gp_state(q, qdot):
    """``[thd_h, thd_v, sin th_h, cos th_h, sin th_v, cos th_v]`` for ``q = [th_h, th_v]``."""
    return ad.concatenate([qdot, ad.sin(q[:, 0:1]), ad.cos(q[:, 0:1]),
                           ad.sin(q[:, 1:2]), ad.cos(q[:, 1:2])], axis=1)


def furuta_policy_input(q, q_prev, Ts):
    """Same layout as the GP state but with backward-difference velocities."""
    return furuta_gp_state(q, (q - q_prev) / Ts)


def ballplate_gp_state(q, qdot, q_prev, Ts):
    """``q = [b_x, b_y, th_1, th_2]``; motor rates come from backward differences."""
    ang, ang_prev = q[:, 2:4], q_prev[:, 2:4]
    return ad.concatenate([q[:, 0:2], qdot[:, 0:2], ad.sin(ang[:, 0:1]), ad.cos(ang[:, 0:1]),
                           ad.sin(ang[:, 1:2]), ad.cos(ang[:, 1:2]), (ang - ang_prev) / Ts], axis=1)


# GP-input columns [sin th1, sin th2, cos th1, cos th2, u] seen by the linear kernel
# (ballplate_gp_state has 10 columns; u is appended as column 10)
BALLPLATE_LINEAR_DIMS = [4, 6, 5, 7, 10]


def ballplate_policy_input(pos, vel, ang, ang_prev):
    """``[b_x, b_y, bd_x, bd_y, th_1, th_1_prev, th_2, th_2_prev]`` from filtered estimates."""
    return ad.concatenate([pos, vel, ang[:, 0:1], ang_prev[:, 0:1], ang[:, 1:2], ang_prev[:, 1:2]], axis=1)
