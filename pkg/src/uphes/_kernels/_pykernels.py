"""Pure-Python hot kernels.

Reference implementation of the per-hour plant step, the simulator forward and
reverse passes, dynamic-programming backward induction and the brute-force
action enumerator.  ``_ckernels.pyx`` mirrors every routine operation for
operation, so both backends return bitwise-identical floats.
"""
import math
from bisect import bisect_left

import numpy as np

PI = math.pi

FLAG_OK = 0
FLAG_CLAMP_LO = 1
FLAG_CLAMP_HI = 2
FLAG_FORCED_IDLE = 3
FLAG_IDLE = 4


def vup(x, r, m):
    """Frustum volume at fill height ``x``."""
    return PI * r * r * x + PI * m * r * x * x + PI * m * m / 3.0 * x * x * x


def dvup(x, r, m):
    return PI * r * r + 2.0 * PI * m * r * x + PI * m * m * x * x


def vlow(x, n, R):
    """Volume of ``n`` spheres of radius ``R`` filled to height ``x``."""
    return n * PI * R * x * x - n * PI / 3.0 * x * x * x


def dvlow(x, n, R):
    return 2.0 * n * PI * R * x - n * PI * x * x


def inv_vup(v, r, m, top, cap):
    """Fill height of the upper reservoir holding ``v``; Newton with bisection guard."""
    if v <= 0.0:
        return 0.0
    if v >= cap:
        return top
    lo = 0.0
    hi = top
    x = top * v / cap
    for _ in range(100):
        fx = vup(x, r, m) - v
        if fx > 0.0:
            hi = x
        elif fx < 0.0:
            lo = x
        else:
            return x
        dx = dvup(x, r, m)
        xn = 0.5 * (lo + hi)
        if dx > 0.0:
            xt = x - fx / dx
            if lo < xt < hi:
                xn = xt
        if abs(xn - x) <= 1e-12:
            return xn
        x = xn
    return x


def inv_vlow(v, n, R, cap):
    """Fill height of the pits holding ``v``; the cubic is monotone on ``[0, 2R]``."""
    top = 2.0 * R
    if v <= 0.0:
        return 0.0
    if v >= cap:
        return top
    lo = 0.0
    hi = top
    x = top * v / cap
    for _ in range(100):
        fx = vlow(x, n, R) - v
        if fx > 0.0:
            hi = x
        elif fx < 0.0:
            lo = x
        else:
            return x
        dx = dvlow(x, n, R)
        xn = 0.5 * (lo + hi)
        if dx > 0.0:
            xt = x - fx / dx
            if lo < xt < hi:
                xn = xt
        if abs(xn - x) <= 1e-12:
            return xn
        x = xn
    return x


class Kernel:
    """Packed plant description plus the routines that run on it.

    Parameters
    ----------
    coef_t, coef_p : (d+1, d+1) arrays
        Dense UPC coefficient tables, ``q = sum C[a, b] p**a h**b``.
    env : (4, e+1) array
        Envelope polynomials in head, ascending powers, rows ordered
        turbine-min, turbine-max, pump-min, pump-max.
    scal : (20,) array
        Scalars in the order given by ``SCALAR_NAMES`` in ``uphes._kernels``.
    """

    backend = "python"

    def __init__(self, coef_t, coef_p, env, scal):
        self.d = coef_t.shape[0] - 1
        self.ct = [[float(x) for x in row] for row in np.asarray(coef_t)]
        self.cp = [[float(x) for x in row] for row in np.asarray(coef_p)]
        self.env = [[float(x) for x in row] for row in np.asarray(env)]
        self.ne = len(self.env[0])
        (self.r_base, self.slope, self.n_pits, self.pit_r, self.v_total,
         self.up_fill, self.head_off, self.v_min, self.v_max, self.dt_s,
         self.dt_h, self.c_op, self.eps, self.v_target, self.vol_coef,
         self.v_init, self.low_cap, self.up_cap, _, _) = [float(x) for x in scal]
        self.h0 = self.head(self.v_init)

    # reservoir geometry -------------------------------------------------
    def vup(self, x):
        return vup(x, self.r_base, self.slope)

    def dvup(self, x):
        return dvup(x, self.r_base, self.slope)

    def vlow(self, x):
        return vlow(x, self.n_pits, self.pit_r)

    def dvlow(self, x):
        return dvlow(x, self.n_pits, self.pit_r)

    def inv_vup(self, v):
        return inv_vup(v, self.r_base, self.slope, self.up_fill, self.up_cap)

    def inv_vlow(self, v):
        return inv_vlow(v, self.n_pits, self.pit_r, self.low_cap)

    def head(self, v):
        return self.inv_vup(self.v_total - v) - self.inv_vlow(v) + self.head_off

    def dhead(self, v):
        du = self.dvup(self.inv_vup(self.v_total - v))
        dl = self.dvlow(self.inv_vlow(v))
        if du <= 0.0 or dl <= 0.0:
            return -math.inf
        return -1.0 / du - 1.0 / dl

    # unit performance curve and envelope --------------------------------
    def upc(self, mode, p, h):
        C = self.ct if mode == 1 else self.cp
        d = self.d
        q = 0.0
        qp = 0.0
        qh = 0.0
        for a in range(d, -1, -1):
            row = C[a]
            s = 0.0
            sh = 0.0
            for b in range(d - a, -1, -1):
                sh = sh * h + s
                s = s * h + row[b]
            qp = qp * p + q
            q = q * p + s
            qh = qh * p + sh
        return q, qp, qh

    def _env1(self, row, h):
        c = self.env[row]
        y = 0.0
        dy = 0.0
        for i in range(self.ne - 1, -1, -1):
            dy = dy * h + y
            y = y * h + c[i]
        return y, dy

    def envelope(self, mode, h):
        base = 0 if mode == 1 else 2
        lo, dlo = self._env1(base, h)
        hi, dhi = self._env1(base + 1, h)
        return lo, hi, dlo, dhi

    def action_power(self, mode, frac, h):
        if mode == 0:
            return 0.0
        lo, hi, _, _ = self.envelope(mode, h)
        if frac <= 0.0:
            return lo
        if frac >= 1.0:
            return hi
        return lo + frac * (hi - lo)

    # one hour of Algorithm-2 style simulation --------------------------
    def step(self, v, h, p_hat):
        if abs(p_hat) < self.eps:
            return 0.0, 0.0, v, FLAG_IDLE
        mode = 1 if p_hat > 0.0 else 2
        lo, hi, _, _ = self.envelope(mode, h)
        flag = FLAG_OK
        p = p_hat
        if p_hat > hi:
            p = hi
            flag = FLAG_CLAMP_HI
        elif p_hat < lo:
            p = lo
            flag = FLAG_CLAMP_LO
        q = self.upc(mode, p, h)[0]
        vn = v + self.dt_s * q
        if vn > self.v_max or vn < self.v_min:
            return 0.0, 0.0, v, FLAG_FORCED_IDLE
        return p, q, vn, flag

    def reward(self, lam, p_hat, p):
        short = p_hat - p if p_hat > p else 0.0
        surp = p - p_hat if p > p_hat else 0.0
        return self.dt_h * (lam * p - self.c_op * p * p) - self.dt_h * lam * (short + 0.5 * surp)

    def vol_penalty(self, lam_med, v):
        if v > self.v_target:
            return lam_med * self.vol_coef * self.head(v) * (v - self.v_target)
        return 0.0

    # simulator ----------------------------------------------------------
    def sim_forward(self, p_hat):
        p_hat = [float(x) for x in p_hat]
        T = len(p_hat)
        p = np.zeros(T)
        q = np.zeros(T)
        vv = np.zeros(T + 1)
        hh = np.zeros(T + 1)
        flags = np.zeros(T, dtype=np.int8)
        v = self.v_init
        h = self.h0
        vv[0] = v
        hh[0] = h
        for t in range(T):
            pt, qt, vn, fl = self.step(v, h, p_hat[t])
            p[t] = pt
            q[t] = qt
            flags[t] = fl
            v = vn
            h = self.head(v)
            vv[t + 1] = v
            hh[t + 1] = h
        return p, q, vv, hh, flags

    def profit_grad(self, p_hat, prices, lam_med):
        p_hat = [float(x) for x in p_hat]
        prices = [float(x) for x in prices]
        T = len(p_hat)
        p = [0.0] * T
        qp = [0.0] * T
        qh = [0.0] * T
        denv = [0.0] * T
        flags = [0] * T
        vv = [0.0] * (T + 1)
        v = self.v_init
        h = self.h0
        vv[0] = v
        for t in range(T):
            pt, qt, vn, fl = self.step(v, h, p_hat[t])
            flags[t] = fl
            p[t] = pt
            if fl <= FLAG_CLAMP_HI:
                mode = 1 if p_hat[t] > 0.0 else 2
                _, qp[t], qh[t] = self.upc(mode, pt, h)
                if fl != FLAG_OK:
                    _, _, dlo, dhi = self.envelope(mode, h)
                    denv[t] = dhi if fl == FLAG_CLAMP_HI else dlo
            v = vn
            h = self.head(v)
            vv[t + 1] = v
        g = np.zeros(T)
        vT = vv[T]
        a_v = 0.0
        if vT > self.v_target:
            a_v = -lam_med * self.vol_coef * (self.dhead(vT) * (vT - self.v_target) + self.head(vT))
        dt_h = self.dt_h
        for t in range(T - 1, -1, -1):
            lam = prices[t]
            fl = flags[t]
            if fl >= FLAG_FORCED_IDLE:
                if p_hat[t] >= 0.0:
                    g[t] = -dt_h * lam
                else:
                    g[t] = 0.5 * dt_h * lam
                continue
            dr = dt_h * (lam - 2.0 * self.c_op * p[t])
            direct = 0.0
            if fl == FLAG_CLAMP_HI:
                dr += dt_h * lam
                direct = -dt_h * lam
            elif fl == FLAG_CLAMP_LO:
                dr -= 0.5 * dt_h * lam
                direct = 0.5 * dt_h * lam
            a_p = dr + a_v * self.dt_s * qp[t]
            a_h = a_v * self.dt_s * qh[t]
            if fl == FLAG_OK:
                g[t] = a_p
            else:
                g[t] = direct
                a_h += a_p * denv[t]
            if t > 0:
                a_v = a_v + a_h * self.dhead(vv[t])
        return g

    # dynamic programming ------------------------------------------------
    @staticmethod
    def _interp(row, knots, x):
        n = len(knots)
        if x <= knots[0]:
            return row[0]
        if x >= knots[n - 1]:
            return row[n - 1]
        i = bisect_left(knots, x)
        if knots[i] == x:
            return row[i]
        w = (x - knots[i - 1]) / (knots[i] - knots[i - 1])
        return row[i - 1] + (row[i] - row[i - 1]) * w

    def dp_solve(self, prices, lam_med, knots, act_mode, act_frac):
        prices = [float(x) for x in prices]
        knots = [float(x) for x in knots]
        modes = [int(x) for x in act_mode]
        fracs = [float(x) for x in act_frac]
        T = len(prices)
        K = len(knots)
        A = len(modes)
        V = np.zeros((T + 1, K))
        pol = np.zeros((T, K), dtype=np.int64)
        heads = [self.head(x) for x in knots]
        nxt = [-self.vol_penalty(lam_med, x) for x in knots]
        V[T] = nxt
        for t in range(T - 1, -1, -1):
            lam = prices[t]
            cur = [0.0] * K
            for k in range(K):
                v = knots[k]
                h = heads[k]
                best = -math.inf
                bi = -1
                for a in range(A):
                    ph = self.action_power(modes[a], fracs[a], h)
                    pt, qt, vn, fl = self.step(v, h, ph)
                    val = self.reward(lam, ph, pt) + self._interp(nxt, knots, vn)
                    if val > best:
                        best = val
                        bi = a
                cur[k] = best
                pol[t, k] = bi
            V[t] = cur
            nxt = cur
        return V, pol

    def dp_rollout(self, prices, knots, V, act_mode, act_frac):
        prices = [float(x) for x in prices]
        knots = [float(x) for x in knots]
        modes = [int(x) for x in act_mode]
        fracs = [float(x) for x in act_frac]
        T = len(prices)
        rows = [[float(x) for x in V[t]] for t in range(T + 1)]
        sched = np.zeros(T)
        choice = np.zeros(T, dtype=np.int64)
        v = self.v_init
        h = self.h0
        for t in range(T):
            best = -math.inf
            bi = -1
            bp = 0.0
            for a in range(len(modes)):
                ph = self.action_power(modes[a], fracs[a], h)
                pt, qt, vn, fl = self.step(v, h, ph)
                val = self.reward(prices[t], ph, pt) + self._interp(rows[t + 1], knots, vn)
                if val > best:
                    best = val
                    bi = a
                    bp = ph
            sched[t] = bp
            choice[t] = bi
            pt, qt, vn, fl = self.step(v, h, bp)
            v = vn
            h = self.head(v)
        return sched, choice

    # exhaustive enumeration ---------------------------------------------
    def enumerate_best(self, prices, lam_med, act_mode, act_frac):
        prices = [float(x) for x in prices]
        modes = [int(x) for x in act_mode]
        fracs = [float(x) for x in act_frac]
        T = len(prices)
        A = len(modes)
        idx = [0] * T
        rs = [0.0] * T
        vs = [0.0] * (T + 1)
        hs = [0.0] * (T + 1)
        vs[0] = self.v_init
        hs[0] = self.h0
        best = -math.inf
        best_idx = [0] * T
        leaves = 0
        t = 0
        idx[0] = -1
        while t >= 0:
            idx[t] += 1
            if idx[t] >= A:
                t -= 1
                continue
            a = idx[t]
            ph = self.action_power(modes[a], fracs[a], hs[t])
            pt, qt, vn, fl = self.step(vs[t], hs[t], ph)
            rs[t] = self.reward(prices[t], ph, pt)
            vs[t + 1] = vn
            if t + 1 < T:
                hs[t + 1] = self.head(vn)
                t += 1
                idx[t] = -1
                continue
            leaves += 1
            tail = -self.vol_penalty(lam_med, vn)
            for s in range(T - 1, -1, -1):
                tail = rs[s] + tail
            if tail > best:
                best = tail
                best_idx = list(idx)
        return np.array(best_idx, dtype=np.int64), best, leaves
