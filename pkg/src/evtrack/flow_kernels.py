"""Numba kernels for the event-stream triplet search.

The per-event search is the throughput-critical loop of the package; it is
compiled with numba (single-threaded, no fastmath) so results stay
bit-deterministic while sustaining millions of events per second.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def search_events(eu, ev, et, ep, start,
                  buf_t, buf_p, buf_n, depth, width, height,
                  radius, xi, window, same_polarity,
                  out_u, out_v, out_t, out_fx, out_fy, out_disc):
    """Incremental triplet search over events ``start..end``.

    For each incoming event e_k, enumerates middle events e_j in the
    (2*radius+1)^2 pixel neighborhood and first events e_i at the mirrored
    pixel 2*x_j - x_k (equal integer pixel hops), requiring strict time
    ordering t_i < t_j < t_k, total age t_k - t_i <= window, and hop-time
    symmetry |(t_k-t_j) - (t_j-t_i)| <= xi.  Each match emits one candidate
    flow (x_k - x_i)/(t_k - t_i) anchored at e_i.  The event is inserted
    into the per-pixel ring buffer only after its search, so it can never
    match itself.

    Returns ``(next_event_index, n_candidates)``.  If the output arrays
    fill up mid-event, all of that event's partial candidates are rolled
    back and its index is returned so the caller can grow the buffers and
    resume without duplicates.
    """
    cap = out_u.shape[0]
    count = 0
    n = eu.shape[0]
    k = start
    while k < n:
        uk = eu[k]
        vk = ev[k]
        tk = et[k]
        pk = ep[k]
        count_at_start = count
        overflow = False
        for dy in range(-radius, radius + 1):
            if overflow:
                break
            vj = vk - dy
            vi = vk - 2 * dy
            if vj < 0 or vj >= height or vi < 0 or vi >= height:
                continue
            for dx in range(-radius, radius + 1):
                if overflow:
                    break
                uj = uk - dx
                ui = uk - 2 * dx
                if uj < 0 or uj >= width or ui < 0 or ui >= width:
                    continue
                pj = vj * width + uj
                mj = buf_n[pj]
                if mj > depth:
                    mj = depth
                if mj == 0:
                    continue
                pi = vi * width + ui
                mi = buf_n[pi]
                if mi > depth:
                    mi = depth
                if mi == 0:
                    continue
                for sj in range(mj):
                    tj = buf_t[pj, sj]
                    if tj >= tk or tk - tj > window:
                        continue
                    if same_polarity and buf_p[pj, sj] != pk:
                        continue
                    for si in range(mi):
                        ti = buf_t[pi, si]
                        if ti >= tj or tk - ti > window:
                            continue
                        if same_polarity and buf_p[pi, si] != pk:
                            continue
                        if abs((tk - tj) - (tj - ti)) <= xi:
                            if count >= cap:
                                overflow = True
                                break
                            dt = tk - ti
                            out_u[count] = ui
                            out_v[count] = vi
                            out_t[count] = ti
                            out_fx[count] = (uk - ui) / dt
                            out_fy[count] = (vk - vi) / dt
                            out_disc[count] = tk
                            count += 1
        if overflow:
            return k, count_at_start
        pix = vk * width + uk
        slot = buf_n[pix] % depth
        buf_t[pix, slot] = tk
        buf_p[pix, slot] = pk
        buf_n[pix] += 1
        k += 1
    return n, count
