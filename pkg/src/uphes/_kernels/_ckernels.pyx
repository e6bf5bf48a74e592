# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Operation-for-operation mirror of ``_pykernels``; see that module for the
meaning of each routine.  Compiled without floating-point contraction so the
two backends agree bitwise.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, INFINITY

cnp.import_array()

cdef double PI = 3.141592653589793

cdef int FLAG_OK = 0
cdef int FLAG_CLAMP_LO = 1
cdef int FLAG_CLAMP_HI = 2
cdef int FLAG_FORCED_IDLE = 3
cdef int FLAG_IDLE = 4


cdef inline double _vup(double x, double r, double m) noexcept nogil:
    return PI * r * r * x + PI * m * r * x * x + PI * m * m / 3.0 * x * x * x


cdef inline double _dvup(double x, double r, double m) noexcept nogil:
    return PI * r * r + 2.0 * PI * m * r * x + PI * m * m * x * x


cdef inline double _vlow(double x, double n, double R) noexcept nogil:
    return n * PI * R * x * x - n * PI / 3.0 * x * x * x


cdef inline double _dvlow(double x, double n, double R) noexcept nogil:
    return 2.0 * n * PI * R * x - n * PI * x * x


cdef double _inv_vup(double v, double r, double m, double top, double cap) noexcept nogil:
    cdef double lo, hi, x, fx, dx, xn, xt
    cdef int it
    if v <= 0.0:
        return 0.0
    if v >= cap:
        return top
    lo = 0.0
    hi = top
    x = top * v / cap
    for it in range(100):
        fx = _vup(x, r, m) - v
        if fx > 0.0:
            hi = x
        elif fx < 0.0:
            lo = x
        else:
            return x
        dx = _dvup(x, r, m)
        xn = 0.5 * (lo + hi)
        if dx > 0.0:
            xt = x - fx / dx
            if lo < xt and xt < hi:
                xn = xt
        if fabs(xn - x) <= 1e-12:
            return xn
        x = xn
    return x


cdef double _inv_vlow(double v, double n, double R, double cap) noexcept nogil:
    cdef double top = 2.0 * R
    cdef double lo, hi, x, fx, dx, xn, xt
    cdef int it
    if v <= 0.0:
        return 0.0
    if v >= cap:
        return top
    lo = 0.0
    hi = top
    x = top * v / cap
    for it in range(100):
        fx = _vlow(x, n, R) - v
        if fx > 0.0:
            hi = x
        elif fx < 0.0:
            lo = x
        else:
            return x
        dx = _dvlow(x, n, R)
        xn = 0.5 * (lo + hi)
        if dx > 0.0:
            xt = x - fx / dx
            if lo < xt and xt < hi:
                xn = xt
        if fabs(xn - x) <= 1e-12:
            return xn
        x = xn
    return x


def vup(x, r, m):
    return _vup(x, r, m)


def dvup(x, r, m):
    return _dvup(x, r, m)


def vlow(x, n, R):
    return _vlow(x, n, R)


def dvlow(x, n, R):
    return _dvlow(x, n, R)


def inv_vup(v, r, m, top, cap):
    return _inv_vup(v, r, m, top, cap)


def inv_vlow(v, n, R, cap):
    return _inv_vlow(v, n, R, cap)


cdef inline double _interp(const double* row, const double* knots, Py_ssize_t n, double x) noexcept nogil:
    cdef Py_ssize_t lo, hi, mid
    cdef double w
    if x <= knots[0]:
        return row[0]
    if x >= knots[n - 1]:
        return row[n - 1]
    lo = 0
    hi = n
    while lo < hi:
        mid = (lo + hi) // 2
        if knots[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    if knots[lo] == x:
        return row[lo]
    w = (x - knots[lo - 1]) / (knots[lo] - knots[lo - 1])
    return row[lo - 1] + (row[lo] - row[lo - 1]) * w


cdef class Kernel:
    """Compiled counterpart of ``_pykernels.Kernel``."""

    cdef readonly int d
    cdef readonly int ne
    cdef double[:, ::1] ct
    cdef double[:, ::1] cp
    cdef double[:, ::1] env
    cdef readonly double r_base, slope, n_pits, pit_r, v_total, up_fill, head_off
    cdef readonly double v_min, v_max, dt_s, dt_h, c_op, eps, v_target, vol_coef
    cdef readonly double v_init, low_cap, up_cap, h0

    backend = "cython"

    def __init__(self, coef_t, coef_p, env, scal):
        cdef const double[::1] s = np.ascontiguousarray(scal, dtype=np.float64)
        self.ct = np.ascontiguousarray(coef_t, dtype=np.float64).copy()
        self.cp = np.ascontiguousarray(coef_p, dtype=np.float64).copy()
        self.env = np.ascontiguousarray(env, dtype=np.float64).copy()
        self.d = self.ct.shape[0] - 1
        self.ne = self.env.shape[1]
        self.r_base = s[0]
        self.slope = s[1]
        self.n_pits = s[2]
        self.pit_r = s[3]
        self.v_total = s[4]
        self.up_fill = s[5]
        self.head_off = s[6]
        self.v_min = s[7]
        self.v_max = s[8]
        self.dt_s = s[9]
        self.dt_h = s[10]
        self.c_op = s[11]
        self.eps = s[12]
        self.v_target = s[13]
        self.vol_coef = s[14]
        self.v_init = s[15]
        self.low_cap = s[16]
        self.up_cap = s[17]
        self.h0 = self._head(self.v_init)

    # reservoir geometry -------------------------------------------------
    cdef inline double _head(self, double v) noexcept nogil:
        return (_inv_vup(self.v_total - v, self.r_base, self.slope, self.up_fill, self.up_cap)
                - _inv_vlow(v, self.n_pits, self.pit_r, self.low_cap) + self.head_off)

    cdef inline double _dhead(self, double v) noexcept nogil:
        cdef double du = _dvup(_inv_vup(self.v_total - v, self.r_base, self.slope,
                                        self.up_fill, self.up_cap), self.r_base, self.slope)
        cdef double dl = _dvlow(_inv_vlow(v, self.n_pits, self.pit_r, self.low_cap),
                                self.n_pits, self.pit_r)
        if du <= 0.0 or dl <= 0.0:
            return -INFINITY
        return -1.0 / du - 1.0 / dl

    def vup(self, x):
        return _vup(x, self.r_base, self.slope)

    def dvup(self, x):
        return _dvup(x, self.r_base, self.slope)

    def vlow(self, x):
        return _vlow(x, self.n_pits, self.pit_r)

    def dvlow(self, x):
        return _dvlow(x, self.n_pits, self.pit_r)

    def inv_vup(self, v):
        return _inv_vup(v, self.r_base, self.slope, self.up_fill, self.up_cap)

    def inv_vlow(self, v):
        return _inv_vlow(v, self.n_pits, self.pit_r, self.low_cap)

    def head(self, double v):
        return self._head(v)

    def dhead(self, double v):
        return self._dhead(v)

    # unit performance curve and envelope --------------------------------
    cdef void _upc(self, int mode, double p, double h, double* q_out, double* qp_out,
                   double* qh_out) noexcept nogil:
        cdef double[:, ::1] C = self.ct if mode == 1 else self.cp
        cdef int d = self.d
        cdef int a, b
        cdef double q = 0.0
        cdef double qp = 0.0
        cdef double qh = 0.0
        cdef double s, sh
        for a in range(d, -1, -1):
            s = 0.0
            sh = 0.0
            for b in range(d - a, -1, -1):
                sh = sh * h + s
                s = s * h + C[a, b]
            qp = qp * p + q
            q = q * p + s
            qh = qh * p + sh
        q_out[0] = q
        qp_out[0] = qp
        qh_out[0] = qh

    def upc(self, int mode, double p, double h):
        cdef double q, qp, qh
        self._upc(mode, p, h, &q, &qp, &qh)
        return q, qp, qh

    cdef void _env1(self, int row, double h, double* y_out, double* dy_out) noexcept nogil:
        cdef double y = 0.0
        cdef double dy = 0.0
        cdef int i
        for i in range(self.ne - 1, -1, -1):
            dy = dy * h + y
            y = y * h + self.env[row, i]
        y_out[0] = y
        dy_out[0] = dy

    cdef void _envelope(self, int mode, double h, double* lo, double* hi, double* dlo,
                        double* dhi) noexcept nogil:
        cdef int base = 0 if mode == 1 else 2
        self._env1(base, h, lo, dlo)
        self._env1(base + 1, h, hi, dhi)

    def envelope(self, int mode, double h):
        cdef double lo, hi, dlo, dhi
        self._envelope(mode, h, &lo, &hi, &dlo, &dhi)
        return lo, hi, dlo, dhi

    cdef double _action_power(self, int mode, double frac, double h) noexcept nogil:
        cdef double lo, hi, dlo, dhi
        if mode == 0:
            return 0.0
        self._envelope(mode, h, &lo, &hi, &dlo, &dhi)
        if frac <= 0.0:
            return lo
        if frac >= 1.0:
            return hi
        return lo + frac * (hi - lo)

    def action_power(self, int mode, double frac, double h):
        return self._action_power(mode, frac, h)

    # one hour of simulation ---------------------------------------------
    cdef int _step(self, double v, double h, double p_hat, double* p_out, double* q_out,
                   double* vn_out) noexcept nogil:
        cdef int mode, flag
        cdef double lo, hi, dlo, dhi, p, q, qp, qh, vn
        if fabs(p_hat) < self.eps:
            p_out[0] = 0.0
            q_out[0] = 0.0
            vn_out[0] = v
            return FLAG_IDLE
        mode = 1 if p_hat > 0.0 else 2
        self._envelope(mode, h, &lo, &hi, &dlo, &dhi)
        flag = FLAG_OK
        p = p_hat
        if p_hat > hi:
            p = hi
            flag = FLAG_CLAMP_HI
        elif p_hat < lo:
            p = lo
            flag = FLAG_CLAMP_LO
        self._upc(mode, p, h, &q, &qp, &qh)
        vn = v + self.dt_s * q
        if vn > self.v_max or vn < self.v_min:
            p_out[0] = 0.0
            q_out[0] = 0.0
            vn_out[0] = v
            return FLAG_FORCED_IDLE
        p_out[0] = p
        q_out[0] = q
        vn_out[0] = vn
        return flag

    def step(self, double v, double h, double p_hat):
        cdef double p, q, vn
        cdef int fl = self._step(v, h, p_hat, &p, &q, &vn)
        return p, q, vn, fl

    cdef inline double _reward(self, double lam, double p_hat, double p) noexcept nogil:
        cdef double short = p_hat - p if p_hat > p else 0.0
        cdef double surp = p - p_hat if p > p_hat else 0.0
        return self.dt_h * (lam * p - self.c_op * p * p) - self.dt_h * lam * (short + 0.5 * surp)

    def reward(self, double lam, double p_hat, double p):
        return self._reward(lam, p_hat, p)

    cdef inline double _vol_penalty(self, double lam_med, double v) noexcept nogil:
        if v > self.v_target:
            return lam_med * self.vol_coef * self._head(v) * (v - self.v_target)
        return 0.0

    def vol_penalty(self, double lam_med, double v):
        return self._vol_penalty(lam_med, v)

    # simulator ----------------------------------------------------------
    def sim_forward(self, p_hat_in):
        cdef const double[::1] p_hat = np.ascontiguousarray(p_hat_in, dtype=np.float64)
        cdef Py_ssize_t T = p_hat.shape[0]
        p_arr = np.zeros(T)
        q_arr = np.zeros(T)
        vv_arr = np.zeros(T + 1)
        hh_arr = np.zeros(T + 1)
        fl_arr = np.zeros(T, dtype=np.int8)
        cdef double[::1] p = p_arr
        cdef double[::1] q = q_arr
        cdef double[::1] vv = vv_arr
        cdef double[::1] hh = hh_arr
        cdef cnp.int8_t[::1] flags = fl_arr
        cdef double v = self.v_init
        cdef double h = self.h0
        cdef double pt, qt, vn
        cdef Py_ssize_t t
        vv[0] = v
        hh[0] = h
        for t in range(T):
            flags[t] = self._step(v, h, p_hat[t], &pt, &qt, &vn)
            p[t] = pt
            q[t] = qt
            v = vn
            h = self._head(v)
            vv[t + 1] = v
            hh[t + 1] = h
        return p_arr, q_arr, vv_arr, hh_arr, fl_arr

    def profit_grad(self, p_hat_in, prices_in, double lam_med):
        cdef const double[::1] p_hat = np.ascontiguousarray(p_hat_in, dtype=np.float64)
        cdef const double[::1] prices = np.ascontiguousarray(prices_in, dtype=np.float64)
        cdef Py_ssize_t T = p_hat.shape[0]
        cdef double[::1] p = np.zeros(T)
        cdef double[::1] qp = np.zeros(T)
        cdef double[::1] qh = np.zeros(T)
        cdef double[::1] denv = np.zeros(T)
        cdef int[::1] flags = np.zeros(T, dtype=np.intc)
        cdef double[::1] vv = np.zeros(T + 1)
        g_arr = np.zeros(T)
        cdef double[::1] g = g_arr
        cdef double v = self.v_init
        cdef double h = self.h0
        cdef double pt, qt, vn, qq, lo, hi, dlo, dhi, vT, a_v, dt_h, lam, dr, direct, a_p, a_h
        cdef int fl, mode
        cdef Py_ssize_t t
        vv[0] = v
        for t in range(T):
            fl = self._step(v, h, p_hat[t], &pt, &qt, &vn)
            flags[t] = fl
            p[t] = pt
            if fl <= FLAG_CLAMP_HI:
                mode = 1 if p_hat[t] > 0.0 else 2
                self._upc(mode, pt, h, &qq, &qp[t], &qh[t])
                if fl != FLAG_OK:
                    self._envelope(mode, h, &lo, &hi, &dlo, &dhi)
                    denv[t] = dhi if fl == FLAG_CLAMP_HI else dlo
            v = vn
            h = self._head(v)
            vv[t + 1] = v
        vT = vv[T]
        a_v = 0.0
        if vT > self.v_target:
            a_v = -lam_med * self.vol_coef * (self._dhead(vT) * (vT - self.v_target) + self._head(vT))
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
                a_v = a_v + a_h * self._dhead(vv[t])
        return g_arr

    # dynamic programming ------------------------------------------------
    @staticmethod
    def _interp(row, knots, double x):
        cdef const double[::1] r = np.ascontiguousarray(row, dtype=np.float64)
        cdef const double[::1] k = np.ascontiguousarray(knots, dtype=np.float64)
        return _interp(&r[0], &k[0], k.shape[0], x)

    def dp_solve(self, prices_in, double lam_med, knots_in, act_mode, act_frac):
        cdef const double[::1] prices = np.ascontiguousarray(prices_in, dtype=np.float64)
        cdef const double[::1] knots = np.ascontiguousarray(knots_in, dtype=np.float64)
        cdef const int[::1] modes = np.ascontiguousarray(act_mode, dtype=np.intc)
        cdef const double[::1] fracs = np.ascontiguousarray(act_frac, dtype=np.float64)
        cdef Py_ssize_t T = prices.shape[0]
        cdef Py_ssize_t K = knots.shape[0]
        cdef Py_ssize_t A = modes.shape[0]
        V_arr = np.zeros((T + 1, K))
        pol_arr = np.zeros((T, K), dtype=np.int64)
        cdef double[:, ::1] V = V_arr
        cdef cnp.int64_t[:, ::1] pol = pol_arr
        cdef double[::1] heads = np.zeros(K)
        cdef Py_ssize_t t, k, a, bi
        cdef double lam, v, h, best, ph, pt, qt, vn, val
        for k in range(K):
            heads[k] = self._head(knots[k])
        for k in range(K):
            V[T, k] = -self._vol_penalty(lam_med, knots[k])
        with nogil:
            for t in range(T - 1, -1, -1):
                lam = prices[t]
                for k in range(K):
                    v = knots[k]
                    h = heads[k]
                    best = -INFINITY
                    bi = -1
                    for a in range(A):
                        ph = self._action_power(modes[a], fracs[a], h)
                        self._step(v, h, ph, &pt, &qt, &vn)
                        val = self._reward(lam, ph, pt) + _interp(&V[t + 1, 0], &knots[0], K, vn)
                        if val > best:
                            best = val
                            bi = a
                    V[t, k] = best
                    pol[t, k] = bi
        return V_arr, pol_arr

    def dp_rollout(self, prices_in, knots_in, V_in, act_mode, act_frac):
        cdef const double[::1] prices = np.ascontiguousarray(prices_in, dtype=np.float64)
        cdef const double[::1] knots = np.ascontiguousarray(knots_in, dtype=np.float64)
        cdef const double[:, ::1] V = np.ascontiguousarray(V_in, dtype=np.float64)
        cdef const int[::1] modes = np.ascontiguousarray(act_mode, dtype=np.intc)
        cdef const double[::1] fracs = np.ascontiguousarray(act_frac, dtype=np.float64)
        cdef Py_ssize_t T = prices.shape[0]
        cdef Py_ssize_t K = knots.shape[0]
        cdef Py_ssize_t A = modes.shape[0]
        sched_arr = np.zeros(T)
        choice_arr = np.zeros(T, dtype=np.int64)
        cdef double[::1] sched = sched_arr
        cdef cnp.int64_t[::1] choice = choice_arr
        cdef double v = self.v_init
        cdef double h = self.h0
        cdef double best, bp, ph, pt, qt, vn, val
        cdef Py_ssize_t t, a, bi
        for t in range(T):
            best = -INFINITY
            bi = -1
            bp = 0.0
            for a in range(A):
                ph = self._action_power(modes[a], fracs[a], h)
                self._step(v, h, ph, &pt, &qt, &vn)
                val = self._reward(prices[t], ph, pt) + _interp(&V[t + 1, 0], &knots[0], K, vn)
                if val > best:
                    best = val
                    bi = a
                    bp = ph
            sched[t] = bp
            choice[t] = bi
            self._step(v, h, bp, &pt, &qt, &vn)
            v = vn
            h = self._head(v)
        return sched_arr, choice_arr

    # exhaustive enumeration ---------------------------------------------
    def enumerate_best(self, prices_in, double lam_med, act_mode, act_frac):
        cdef const double[::1] prices = np.ascontiguousarray(prices_in, dtype=np.float64)
        cdef const int[::1] modes = np.ascontiguousarray(act_mode, dtype=np.intc)
        cdef const double[::1] fracs = np.ascontiguousarray(act_frac, dtype=np.float64)
        cdef Py_ssize_t T = prices.shape[0]
        cdef Py_ssize_t A = modes.shape[0]
        cdef cnp.int64_t[::1] idx = np.zeros(T, dtype=np.int64)
        best_arr = np.zeros(T, dtype=np.int64)
        cdef cnp.int64_t[::1] best_idx = best_arr
        cdef double[::1] rs = np.zeros(T)
        cdef double[::1] vs = np.zeros(T + 1)
        cdef double[::1] hs = np.zeros(T + 1)
        cdef double best = -INFINITY
        cdef double ph, pt, qt, vn, tail
        cdef long long leaves = 0
        cdef Py_ssize_t t, s, a, j
        vs[0] = self.v_init
        hs[0] = self.h0
        t = 0
        idx[0] = -1
        with nogil:
            while t >= 0:
                idx[t] += 1
                if idx[t] >= A:
                    t -= 1
                    continue
                a = idx[t]
                ph = self._action_power(modes[a], fracs[a], hs[t])
                self._step(vs[t], hs[t], ph, &pt, &qt, &vn)
                rs[t] = self._reward(prices[t], ph, pt)
                vs[t + 1] = vn
                if t + 1 < T:
                    hs[t + 1] = self._head(vn)
                    t += 1
                    idx[t] = -1
                    continue
                leaves += 1
                tail = -self._vol_penalty(lam_med, vn)
                for s in range(T - 1, -1, -1):
                    tail = rs[s] + tail
                if tail > best:
                    best = tail
                    for j in range(T):
                        best_idx[j] = idx[j]
        return best_arr, best, int(leaves)
