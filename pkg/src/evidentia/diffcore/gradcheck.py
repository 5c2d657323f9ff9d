"""Central finite-difference checks against tape gradients."""
import numpy as np

from evidentia.diffcore.tape import Tape


def relative_error(analytic, numeric, floor=1e-6):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients meaningful."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradients(loss_fn, params, rng=None, n_coords=None, h=1e-5, floor=1e-6):
    """Compare tape gradients of ``loss_fn()`` with central differences.

    ``params`` is a sequence of leaf tensors that ``loss_fn`` reads. When
    ``n_coords`` is given, that many (param, flat index) coordinates are
    sampled uniformly over all parameter entries; otherwise every entry is
    checked. Returns ``(max_rel_error, records)`` where records holds
    ``(param_index, flat_index, analytic, numeric)`` tuples.
    """
    with Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss)

    coords = [(pi, j) for pi, p in enumerate(params) for j in range(p.size)]
    if n_coords is not None and n_coords < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        picks = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    records = []
    for pi, j in coords:
        p = params[pi]
        flat = p.data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        up = loss_fn().item()
        flat[j] = orig - h
        down = loss_fn().item()
        flat[j] = orig
        numeric = (up - down) / (2 * h)
        g = grads.get(p)
        analytic = 0.0 if g is None else float(g.reshape(-1)[j])
        records.append((pi, j, analytic, numeric))
    if not records:
        return 0.0, records
    a = np.array([r[2] for r in records])
    n = np.array([r[3] for r in records])
    return float(relative_error(a, n, floor).max()), records
