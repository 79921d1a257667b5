"""Finite-difference checking of PlresModel gradients, shared by the test modules."""

import math

import numpy as np

from resqos.nncore import finite_difference_grad


def _signs(model):
    return np.concatenate([(a > 0).ravel() for b in model.blocks for a in b.preactivations()])


def gradient_check(model, batch, rng, coords_per_param=3, h=1e-5, floor=1e-7):
    """Compare backprop to central differences on a random linear functional of the output.

    Returns the list of relative errors at sampled coordinates. Coordinates
    whose +-h perturbation flips any ReLU are resampled, so every sample is
    away from a kink.
    """
    weights = rng.normal(size=len(batch))
    model.zero_grad()
    model.forward(batch)
    base_signs = _signs(model)
    model.backward(weights)
    analytic = {p.name: p.grad.copy() for p in model.parameters()}

    used_rows = {
        "embed.user_id.table": batch.user_id,
        "embed.service_id.table": batch.service_id,
        "embed.user_country.table": batch.user_country_code,
        "embed.user_as.table": batch.user_as_code,
        "embed.service_country.table": batch.service_country_code,
        "embed.service_as.table": batch.service_as_code,
    }
    active = {src for _, src in model.segments}

    state = {}

    def f():
        out = float(weights @ model.forward(batch))
        state["kink"] = state.get("kink", False) or not np.array_equal(_signs(model), base_signs)
        return out

    errors = []
    for p in model.parameters():
        if p.name in used_rows:
            table = p.name.split(".")[1]
            if table not in active:
                assert not analytic[p.name].any(), f"ablated {p.name} received gradient"
                continue
            candidates = [(int(r), c) for r in np.unique(used_rows[p.name]) for c in range(p.shape[1])]
        else:
            candidates = list(np.ndindex(p.shape))
        picked = 0
        for j in rng.permutation(len(candidates)):
            if picked == coords_per_param:
                break
            idx = candidates[j]
            state["kink"] = False
            num = finite_difference_grad(f, p.value, idx, h)
            if state["kink"]:
                continue
            a = analytic[p.name][idx]
            errors.append(abs(a - num) / max(abs(a), abs(num), floor))
            picked += 1
    return errors


def brute_force_neighbourhood(q, target, item, top_k):
    """Loop-and-dict reference for one neighbourhood prediction (subjects on rows)."""
    n_rows, n_cols = q.shape
    obs = [{j: q[i, j] for j in range(n_cols) if not math.isnan(q[i, j])} for i in range(n_rows)]
    means = [sum(o.values()) / len(o) if o else None for o in obs]
    all_vals = [v for o in obs for v in o.values()]
    cands = []
    for r in range(n_rows):
        if r == target or item not in obs[r]:
            continue
        common = sorted(set(obs[r]) & set(obs[target]))
        if len(common) < 2:
            continue
        a = [obs[target][c] for c in common]
        b = [obs[r][c] for c in common]
        ma, mb = sum(a) / len(a), sum(b) / len(b)
        num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
        den = math.sqrt(sum((x - ma) ** 2 for x in a)) * math.sqrt(sum((y - mb) ** 2 for y in b))
        if den == 0 or num / den <= 0:
            continue
        cands.append((-round(num / den, 12), r, num / den))
    cands.sort()  # equal similarity -> lower index first
    chosen = [(sim, r) for _, r, sim in cands[:top_k]]
    if not chosen:
        return means[target] if means[target] is not None else sum(all_vals) / len(all_vals)
    num = sum(s * (obs[r][item] - means[r]) for s, r in chosen)
    return means[target] + num / sum(s for s, _ in chosen)
