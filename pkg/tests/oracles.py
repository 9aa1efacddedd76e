"""Independent reference implementations used only by the tests."""
import numpy as np


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def mirror_visible(x, theta, sources, receivers, tol):
    """Closed-form specular visibility in a homogeneous medium.

    A straight ray from ``x`` at angle ``phi`` passes within ``tol`` of a point
    ``q`` at distance ``D`` iff ``|phi - angle(q - x)| <= asin(tol / D)``. The
    atom is visible iff some half-angle ``alpha`` in ``(0, 90 deg)`` puts
    ``theta + alpha`` in a source interval and ``theta - alpha`` in a receiver
    interval (or the reverse), for the normal ``theta`` or ``theta + pi``.
    """
    def intervals(points):
        v = np.asarray(points) - np.asarray(x)
        d = np.hypot(v[:, 0], v[:, 1])
        psi = np.arctan2(v[:, 1], v[:, 0])
        w = np.where(d <= tol, np.pi, np.arcsin(np.minimum(1.0, tol / np.maximum(d, 1e-300))))
        return psi, w

    ps, ws = intervals(sources)
    pr, wr = intervals(receivers)
    for normal in (theta, theta + np.pi):
        for sign in (1.0, -1.0):
            # alpha such that normal + sign*alpha hits a source, normal - sign*alpha a receiver
            cs = _wrap(sign * (ps - normal))
            cr = _wrap(sign * (normal - pr))
            lo = np.maximum.outer(cs - ws, cr - wr)
            hi = np.minimum.outer(cs + ws, cr + wr)
            full_s = (ws >= np.pi)[:, None]
            full_r = (wr >= np.pi)[None, :]
            lo = np.where(full_s, np.broadcast_to(cr - wr, lo.shape), lo)
            hi = np.where(full_s, np.broadcast_to(cr + wr, hi.shape), hi)
            lo = np.where(full_r, np.broadcast_to((cs - ws)[:, None], lo.shape), lo)
            hi = np.where(full_r, np.broadcast_to((cs + ws)[:, None], hi.shape), hi)
            lo = np.where(full_s & full_r, 0.0, lo)
            hi = np.where(full_s & full_r, np.pi / 2, hi)
            if np.any(np.maximum(lo, 0.0) < np.minimum(hi, np.pi / 2)):
                return True
    return False
