"""Pure numpy GRU recurrence kernels (fallback for the compiled ``_kernels``).

Gate layout along the last axis of a ``3H`` block is ``[update | reset | candidate]``.
One step is::

    z  = sigmoid(xp_z + h @ U_z)
    r  = sigmoid(xp_r + h @ U_r)
    n  = tanh(xp_n + (r * h) @ U_n)
    h' = (1 - z) * h + z * n

where ``xp`` already holds the input projection plus bias. Masked positions
(mask 0) carry the previous state through unchanged.
"""
import numpy as np

BACKEND = "python"


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def gru_scan_forward(xp, h0, w_hh, mask):
    T, B, H3 = xp.shape
    H = H3 // 3
    u_zr = w_hh[:, : 2 * H]
    u_n = w_hh[:, 2 * H :]
    hs = np.empty((T, B, H))
    zs = np.empty((T, B, H))
    rs = np.empty((T, B, H))
    ns = np.empty((T, B, H))
    h = h0
    for t in range(T):
        g = xp[t]
        zr = _sigmoid(g[:, : 2 * H] + h @ u_zr)
        z = zr[:, :H]
        r = zr[:, H:]
        n = np.tanh(g[:, 2 * H :] + (r * h) @ u_n)
        m = mask[t][:, None]
        h = h + m * (z * (n - h))
        hs[t], zs[t], rs[t], ns[t] = h, z, r, n
    return hs, zs, rs, ns


def _cell_backward(dh, h_prev, z, r, n, u_zr, u_n, H):
    """Backprop one step given dL/dh_new. Returns (dxp, dh_prev, drh, dzr)."""
    dz = dh * (n - h_prev)
    dn = dh * z
    dan = dn * (1.0 - n * n)
    drh = dan @ u_n.T
    dr = drh * h_prev
    dzr = np.empty((dh.shape[0], 2 * H))
    dzr[:, :H] = dz * z * (1.0 - z)
    dzr[:, H:] = dr * r * (1.0 - r)
    dh_prev = dh * (1.0 - z) + drh * r + dzr @ u_zr.T
    dxp = np.concatenate([dzr, dan], axis=1)
    return dxp, dh_prev


def gru_scan_backward(dhs, h0, w_hh, mask, hs, zs, rs, ns):
    T, B, H = hs.shape
    u_zr = w_hh[:, : 2 * H]
    u_n = w_hh[:, 2 * H :]
    dxp = np.zeros((T, B, 3 * H))
    dw_hh = np.zeros_like(w_hh)
    carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev = hs[t - 1] if t > 0 else h0
        dh = dhs[t] + carry
        m = mask[t][:, None]
        dstep = m * dh
        dx, dh_prev = _cell_backward(dstep, h_prev, zs[t], rs[t], ns[t], u_zr, u_n, H)
        dxp[t] = dx
        dw_hh[:, : 2 * H] += h_prev.T @ dx[:, : 2 * H]
        dw_hh[:, 2 * H :] += (rs[t] * h_prev).T @ dx[:, 2 * H :]
        carry = dh_prev + (1.0 - m) * dh
    return dxp, carry, dw_hh


def gru_decode_forward(h0, w_ih, w_hh, b, w_out, b_out, steps):
    B, H = h0.shape
    F = w_out.shape[1]
    u_zr = w_hh[:, : 2 * H]
    u_n = w_hh[:, 2 * H :]
    logits = np.empty((steps, B, F))
    ys = np.empty((steps, B, F))
    hs = np.empty((steps, B, H))
    zs = np.empty((steps, B, H))
    rs = np.empty((steps, B, H))
    ns = np.empty((steps, B, H))
    h = h0
    x = np.zeros((B, F))
    for t in range(steps):
        g = x @ w_ih + b
        zr = _sigmoid(g[:, : 2 * H] + h @ u_zr)
        z = zr[:, :H]
        r = zr[:, H:]
        n = np.tanh(g[:, 2 * H :] + (r * h) @ u_n)
        h = h + z * (n - h)
        a = h @ w_out + b_out
        x = _sigmoid(a)
        logits[t], ys[t], hs[t], zs[t], rs[t], ns[t] = a, x, h, z, r, n
    return logits, ys, hs, zs, rs, ns


def gru_decode_backward(dlogits, h0, w_ih, w_hh, w_out, ys, hs, zs, rs, ns):
    T, B, H = hs.shape
    F = w_out.shape[1]
    u_zr = w_hh[:, : 2 * H]
    u_n = w_hh[:, 2 * H :]
    dw_ih = np.zeros_like(w_ih)
    dw_hh = np.zeros_like(w_hh)
    db = np.zeros(3 * H)
    dw_out = np.zeros_like(w_out)
    db_out = np.zeros(F)
    dh_carry = np.zeros((B, H))
    dx_next = np.zeros((B, F))  # dL/d(input of step t+1) == dL/dy_t
    for t in range(T - 1, -1, -1):
        y = ys[t]
        da = dlogits[t] + dx_next * y * (1.0 - y)
        h = hs[t]
        dw_out += h.T @ da
        db_out += da.sum(axis=0)
        dh = da @ w_out.T + dh_carry
        h_prev = hs[t - 1] if t > 0 else h0
        dx, dh_prev = _cell_backward(dh, h_prev, zs[t], rs[t], ns[t], u_zr, u_n, H)
        x_in = ys[t - 1] if t > 0 else np.zeros((B, F))
        dw_ih += x_in.T @ dx
        db += dx.sum(axis=0)
        dw_hh[:, : 2 * H] += h_prev.T @ dx[:, : 2 * H]
        dw_hh[:, 2 * H :] += (rs[t] * h_prev).T @ dx[:, 2 * H :]
        dx_next = dx @ w_ih.T
        dh_carry = dh_prev
    return dh_carry, dw_ih, dw_hh, db, dw_out, db_out
