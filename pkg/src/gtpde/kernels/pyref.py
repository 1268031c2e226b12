"""Pure-numpy reference implementation of the particle stepping kernels.

This backend defines the semantics; the compiled backend in _core.pyx must
reproduce it bit-for-bit (same floating-point expression trees, same
deterministic tie rules).  Positions are always float64 and sorted; teeth are
disjoint ascending intervals so a global sort groups particles by tooth.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericsError

BACKEND_NAME = "python"

# Relative clamp for exit depths: a particle may not be inserted past the far
# edge of the receiving tooth.
_DEPTH_CLAMP = 1.0 - 1e-12


def tooth_drift(pos, offsets, m, coef, cap, wrap, wrap_width=0.0):
    """Drift displacements from the m-th neighbor span, per tooth segment.

    Args:
        pos: sorted positions, grouped by tooth via offsets.
        offsets: int64 array of length N+1 with segment boundaries.
        m: neighbor order.
        coef: m*h/Z, numerator of the displacement.
        cap: maximum displacement (tooth width; keeps d=0 finite).
        wrap: if True the (single) segment is treated as periodic with period
            wrap_width; otherwise neighbor indices clamp to the segment ends.

    Returns:
        Displacement array (always >= 0).
    """
    n = pos.size
    if n == 0:
        return np.empty(0)
    counts = np.diff(offsets)
    idx = np.arange(n, dtype=np.int64)
    start_of = np.repeat(offsets[:-1], counts)
    end_of = np.repeat(offsets[1:], counts)
    if wrap:
        cnt = end_of - start_of
        loc = idx - start_of
        jr = start_of + (loc + m) % cnt
        jl = start_of + (loc - m) % cnt
        d = pos[jr] - pos[jl]
        wrapped = (loc + m >= cnt) | (loc - m < 0)
        d = np.where(wrapped, d + wrap_width, d)
    else:
        jr = np.minimum(idx + m, end_of - 1)
        jl = np.maximum(idx - m, start_of)
        d = pos[jr] - pos[jl]
    with np.errstate(divide="ignore", invalid="ignore"):
        disp = coef / d
    return np.where(d > 0.0, np.minimum(disp, cap), cap)


def step_full_positions(pos, noise, m, coef, L, cap):
    """One periodic whole-domain step; returns new sorted positions."""
    n = pos.size
    if n < 2 * m + 1:
        raise NumericsError(
            f"{n} particles but neighbor order m={m} needs at least {2 * m + 1}"
        )
    idx = np.arange(n, dtype=np.int64)
    jr = (idx + m) % n
    jl = (idx - m) % n
    d = pos[jr] - pos[jl]
    wrapped = (idx + m >= n) | (idx - m < 0)
    d = np.where(wrapped, d + L, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        disp = coef / d
    disp = np.where(d > 0.0, np.minimum(disp, cap), cap)
    new = (pos + disp) + noise
    new = np.fmod(new, L)
    new[new < 0.0] += L
    new.sort()
    return new


def _apportion(n_out, frac_anti, frac_down, carry_anti=None, carry_down=None):
    """Integer apportionment of a batch: round half away from zero.

    With carry arrays the fractional remainders are banked per tooth and
    folded into the next batch, so quantization errors stay bounded instead
    of accumulating as white noise (a fresh batch with zero carry rounds the
    same as without carries).  Carries are updated in place.
    """
    fa = n_out * frac_anti
    fd = n_out * frac_down
    if carry_anti is not None:
        fa = fa + carry_anti
        fd = fd + carry_down
    n_anti = np.floor(fa + 0.5).astype(np.int64)
    n_down = np.floor(fd + 0.5).astype(np.int64)
    if carry_anti is not None:
        carry_anti[...] = fa - n_anti
        carry_down[...] = fd - n_down
    n_same = n_out + n_anti - n_down
    return n_anti, n_down, n_same

def redistribute_events(ev_tooth, ev_dir, ev_delta, left, w, n_teeth,
                        frac_anti, frac_down, carry=None, max_rounds=64):
    """Cascaded flux redistribution of exit events.

    Each round groups the events per (tooth, direction) ordered by depth and
    splits the batch: the n_down deepest jump to the downstream tooth, the
    n_anti shallowest spawn an anti-particle in the upstream tooth plus a
    twin at home, the rest re-enter their own tooth.  Home and downstream
    placements enter the receiving tooth through the boundary the flux
    crosses (right-going influx through the left edge, left-going through
    the right edge) at the recorded depth; anti-particles are inserted from
    the edge facing the source tooth.  A real placement deeper than the
    tooth width exits the far side and is fed into the next round with the
    leftover depth; anti depths are clamped (they only pick an annihilation
    site).  With a single tooth every channel wraps, which reproduces a
    periodic domain of one tooth exactly.

    Args:
        carry: optional (n_teeth, 2, 2) array of fractional apportionment
            remainders, indexed [tooth, direction(0=right), {anti, down}];
            updated in place (first-round batches only).

    Returns:
        (real_pos, real_tooth, anti_pos, anti_tooth, stats dict)
    """
    dmax = w * _DEPTH_CLAMP
    real_pos_parts, real_tooth_parts = [], []
    anti_pos_parts, anti_tooth_parts = [], []
    n_anti_total = 0
    n_down_total = 0
    n_cascaded = 0
    # Depths beyond a tooth width wrap within the receiving tooth: the tooth
    # is a statistical sample of its cell, so a deep entry has no meaningful
    # sub-tooth position.  Clamping instead piles mass on the far edge and
    # letting deep jumps pass through to further teeth overdrives transport.
    n_deep = int(np.count_nonzero(ev_delta >= w))
    if n_deep:
        ev_delta = np.fmod(ev_delta, w)
    rounds = 0
    while ev_tooth.size:
        rounds += 1
        if rounds > max_rounds:
            raise NumericsError(
                f"flux redistribution did not settle within {max_rounds} rounds"
            )
        if rounds > 1:
            n_cascaded += int(ev_tooth.size)
        next_tooth, next_dir, next_delta = [], [], []
        for going_right in (True, False):
            sel = ev_dir > 0 if going_right else ev_dir < 0
            if not np.any(sel):
                continue
            order = np.lexsort((ev_delta[sel], ev_tooth[sel]))
            tooth = ev_tooth[sel][order]
            delta = ev_delta[sel][order]
            n_out = np.bincount(tooth, minlength=n_teeth).astype(np.int64)
            if carry is not None and rounds == 1:
                d_idx = 0 if going_right else 1
                n_anti, n_down, _ = _apportion(
                    n_out, frac_anti, frac_down,
                    carry[:, d_idx, 0], carry[:, d_idx, 1],
                )
            else:
                n_anti, n_down, _ = _apportion(n_out, frac_anti, frac_down)
            n_anti_total += int(n_anti.sum())
            n_down_total += int(n_down.sum())
            g0 = np.zeros(n_teeth + 1, dtype=np.int64)
            np.cumsum(n_out, out=g0[1:])
            rank = np.arange(tooth.size, dtype=np.int64) - g0[tooth]
            home_mask = rank < (n_out - n_down)[tooth]
            twin_mask = rank < n_anti[tooth]
            down_mask = ~home_mask
            if going_right:
                down_dest = (tooth + 1) % n_teeth
                anti_dest = (tooth - 1) % n_teeth
            else:
                down_dest = (tooth - 1) % n_teeth
                anti_dest = (tooth + 1) % n_teeth
            dest = np.concatenate(
                [tooth[home_mask], tooth[twin_mask], down_dest[down_mask]]
            )
            dep = np.concatenate([delta[home_mask], delta[twin_mask],
                                  delta[down_mask]])
            inside = dep < w
            dest_in = dest[inside]
            dep_in = dep[inside]
            if going_right:
                pos = left[dest_in] + dep_in
            else:
                pos = (left[dest_in] + w) - dep_in
            real_pos_parts.append(pos)
            real_tooth_parts.append(dest_in)
            if not inside.all():
                next_tooth.append(dest[~inside])
                next_delta.append(dep[~inside] - w)
                next_dir.append(np.full(int((~inside).sum()),
                                        1 if going_right else -1,
                                        dtype=np.int8))
            a_dest = anti_dest[twin_mask]
            a_dep = np.minimum(delta[twin_mask], dmax)
            if going_right:
                if n_teeth == 1:
                    a_pos = left[a_dest] + a_dep
                else:
                    a_pos = (left[a_dest] + w) - a_dep
            else:
                if n_teeth == 1:
                    a_pos = (left[a_dest] + w) - a_dep
                else:
                    a_pos = left[a_dest] + a_dep
            anti_pos_parts.append(a_pos)
            anti_tooth_parts.append(a_dest)
        if next_tooth:
            ev_tooth = np.concatenate(next_tooth)
            ev_dir = np.concatenate(next_dir)
            ev_delta = np.concatenate(next_delta)
        else:
            ev_tooth = np.empty(0, dtype=np.int64)
            ev_dir = np.empty(0, dtype=np.int8)
            ev_delta = np.empty(0)
    stats = {
        "n_anti_created": n_anti_total,
        "n_down": n_down_total,
        "n_cascaded": n_cascaded,
        "n_deep": n_deep,
    }
    return (
        np.concatenate(real_pos_parts) if real_pos_parts else np.empty(0),
        np.concatenate(real_tooth_parts) if real_tooth_parts else np.empty(0, dtype=np.int64),
        np.concatenate(anti_pos_parts) if anti_pos_parts else np.empty(0),
        np.concatenate(anti_tooth_parts) if anti_tooth_parts else np.empty(0, dtype=np.int64),
        stats,
    )


def _annihilate(pos, tooth, offsets, anti_pos, anti_tooth):
    """Cancel each anti-particle with the nearest real particle in its tooth.

    Antis are processed in (tooth, position) order; distance ties break
    toward the lower coordinate.  Antis landing in an empty tooth are
    returned as survivors.

    Returns:
        (alive mask over pos, surviving anti positions, surviving anti teeth)
    """
    n = pos.size
    alive = np.ones(n, dtype=bool)
    nxt = np.arange(1, n + 1, dtype=np.int64)
    prv = np.arange(-1, n - 1, dtype=np.int64)
    surv_pos = []
    surv_tooth = []
    order = np.lexsort((anti_pos, anti_tooth))
    for k in order:
        t = int(anti_tooth[k])
        q = float(anti_pos[k])
        lo, hi = int(offsets[t]), int(offsets[t + 1])
        if lo == hi:
            surv_pos.append(q)
            surv_tooth.append(t)
            continue
        j = int(np.searchsorted(pos[lo:hi], q)) + lo
        # nearest alive candidate on each side, restricted to this tooth
        r = j
        while r < hi and not alive[r]:
            r = nxt[r]
        l = j - 1
        while l >= lo and not alive[l]:
            l = prv[l]
        if l < lo and r >= hi:
            surv_pos.append(q)
            surv_tooth.append(t)
            continue
        if l < lo:
            victim = r
        elif r >= hi:
            victim = l
        else:
            dl = q - pos[l]
            dr = pos[r] - q
            victim = l if dl <= dr else r
        alive[victim] = False
        # splice out of the linked list for later searches
        vn = nxt[victim]
        vp = prv[victim]
        if vn < n:
            prv[vn] = vp
        if vp >= 0:
            nxt[vp] = vn
    return alive, np.array(surv_pos), np.array(surv_tooth, dtype=np.int64)


def step_teeth(pos, counts, noise, left, w, m, coef, frac_anti, frac_down,
               pending_pos, pending_tooth, carry=None):
    """One fused gap-tooth step: drift+noise, flux redistribution, annihilation.

    Args:
        pos: sorted particle positions (teeth are disjoint so the global sort
            groups them per tooth).
        counts: int64 particles per tooth.
        noise: Gaussian displacements aligned with pos.
        left: left edge of each tooth; right edge is left + w.
        w: tooth width.
        m, coef: neighbor order and drift numerator m*h/Z.
        frac_anti, frac_down: redistribution fractions alpha*(1-alpha)/2 and
            alpha*(1+alpha)/2.
        pending_pos, pending_tooth: anti-particles carried from earlier steps.
        carry: optional per-tooth fractional apportionment remainders,
            updated in place.

    Returns:
        (new_pos, new_counts, pending_pos, pending_tooth, stats dict)
    """
    n_teeth = counts.size
    offsets = np.zeros(n_teeth + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    n = pos.size
    if n > 0:
        disp = tooth_drift(pos, offsets, m, coef, w, n_teeth == 1, w)
        new = (pos + disp) + noise
    else:
        new = pos
    tooth_of = np.repeat(np.arange(n_teeth, dtype=np.int64), counts)
    l_of = left[tooth_of]
    r_of = l_of + w
    is_left = new < l_of
    is_right = new >= r_of
    stay = ~(is_left | is_right)

    ev_tooth = np.concatenate([tooth_of[is_right], tooth_of[is_left]])
    ev_delta = np.concatenate([new[is_right] - r_of[is_right],
                               l_of[is_left] - new[is_left]])
    ev_dir = np.concatenate([
        np.ones(int(is_right.sum()), dtype=np.int8),
        -np.ones(int(is_left.sum()), dtype=np.int8),
    ])
    n_exit = int(ev_tooth.size)

    rp, rt, anti_pos, anti_tooth, rstats = redistribute_events(
        ev_tooth, ev_dir, ev_delta, left, w, n_teeth, frac_anti, frac_down,
        carry=carry,
    )

    all_pos = np.concatenate([new[stay], rp])
    all_tooth = np.concatenate([tooth_of[stay], rt])
    order = np.lexsort((all_pos, all_tooth))
    all_pos = all_pos[order]
    all_tooth = all_tooth[order]
    new_counts = np.bincount(all_tooth, minlength=n_teeth).astype(np.int64)
    new_offsets = np.zeros(n_teeth + 1, dtype=np.int64)
    np.cumsum(new_counts, out=new_offsets[1:])

    anti_pos = np.concatenate([anti_pos, pending_pos])
    anti_tooth = np.concatenate([anti_tooth, pending_tooth])
    n_annihilated = 0
    if anti_pos.size:
        if all_pos.size == 0:
            raise NumericsError(
                f"{anti_pos.size} anti-particles outstanding but every tooth "
                "is empty: particle conservation cannot be restored"
            )
        alive, surv_pos, surv_tooth = _annihilate(
            all_pos, all_tooth, new_offsets, anti_pos, anti_tooth
        )
        n_annihilated = int(anti_pos.size - surv_pos.size)
        if n_annihilated:
            all_pos = all_pos[alive]
            all_tooth = all_tooth[alive]
            new_counts = np.bincount(all_tooth, minlength=n_teeth).astype(np.int64)
        anti_pos, anti_tooth = surv_pos, surv_tooth

    stats = {
        "n_exit": n_exit,
        "n_deep": rstats["n_deep"],
        "n_cascaded": rstats["n_cascaded"],
        "n_anti_created": rstats["n_anti_created"],
        "n_down": rstats["n_down"],
        "n_annihilated": n_annihilated,
        "n_pending": int(anti_pos.size),
    }
    return all_pos, new_counts, anti_pos, anti_tooth, stats
