"""Finite-difference verification of the autodiff gradients, per module.

Each check builds a small instance of one module, casts it to float64, and
compares autodiff gradients of a random linear read-out (or BCE, for the
decoder) against central differences with step 1e-3.  Per parameter group
the reported error is

    max_i |a_i - n_i| / max(|a_i|, |n_i|, 0.01 * max_j |n_j|, 1e-8)

so elements carrying at least 1% of the group's gradient scale are held to a
plain relative error.

Central differences are only meaningful on a single linear piece of the
piecewise ops (relu, argmax pooling, loss clamp).  An element whose +-step
evaluations change any branch decision is set aside and another one drawn;
the number set aside is reported.
"""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dam import DAM
from .decoder import FusionDecoder, bce_loss, decode
from .dem_rfb import DEM, RFB, RFBConfig
from .encoder import EncoderConfig, PyramidEncoder
from .errors import UsageError
from .fam import FAM

STEP = 1e-3
TOLERANCE = 1e-3
ABS_FLOOR = 1e-8
SELECTORS = ("encoder", "fam", "dem", "rfb", "dam", "decoder")


@dataclass
class GroupResult:
    module: str
    group: str
    max_rel_error: float
    checked: int
    tolerance: float = TOLERANCE
    kinked: int = 0

    @property
    def passed(self):
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance)


def _readout(rng, outputs):
    """Loss = sum_k <out_k, R_k> with fixed random R_k."""
    weights = [T.Tensor(rng.standard_normal(o.shape)) for o in outputs]

    def loss_of(outs):
        total = None
        for o, w in zip(outs, weights):
            term = T.sum(T.mul(o, w))
            total = term if total is None else T.add(total, term)
        return total

    return loss_of


def _build(selector, rng):
    """Returns (module, named inputs, loss closure over the inputs)."""
    def randn(*shape):
        return rng.standard_normal(shape)

    if selector == "encoder":
        mod = PyramidEncoder(rng, EncoderConfig(channels=(4, 6, 8, 10), num_heads=2, sr_ratio=2))
        inputs = {"image": randn(1, 3, 32, 32)}

        def forward(x):
            return list(mod(x["image"]).levels())
    elif selector == "fam":
        mod = FAM(rng)
        inputs = {"x": randn(2, 4, 4, 4)}

        def forward(x):
            return [mod(x["x"])]
    elif selector == "dem":
        mod = DEM(rng, 4)
        inputs = {"f1": randn(1, 4, 4, 4), "f2": randn(1, 4, 2, 2), "f3": randn(1, 4, 1, 1)}

        def forward(x):
            fused = mod(x["f1"], x["f2"], x["f3"])
            return [fused.d1, fused.d2]
    elif selector == "rfb":
        mod = RFB(rng, 4, RFBConfig(inter_width=2))
        inputs = {"x": randn(1, 4, 4, 4)}

        def forward(x):
            return [mod(x["x"])]
    elif selector == "dam":
        mod = DAM(rng, 8)
        mod.gamma.data[:] = 0.7
        mod.beta.data[:] = -0.4
        mod.fuse_conv.weight.data = rng.uniform(-0.5, 0.5, mod.fuse_conv.weight.shape).astype(np.float32)
        inputs = {"a": 0.5 * randn(1, 8, 3, 3)}

        def forward(x):
            return [mod(x["a"])]
    elif selector == "decoder":
        mod = FusionDecoder(rng, 4)
        inputs = {"high": randn(1, 4, 2, 2), "low": randn(1, 4, 4, 4)}
        target = (rng.random((1, 1, 8, 8)) < 0.5).astype(np.float64)

        def forward(x):
            return decode(x["high"], x["low"], mod, (8, 8))

        mod.astype(np.float64)
        return mod, inputs, lambda x: bce_loss(forward(x), target)
    else:
        raise UsageError(f"unknown gradcheck selector {selector!r}; choose from all, "
                         + ", ".join(SELECTORS))

    mod.astype(np.float64)
    with T.no_grad():
        probe = forward({k: T.Tensor(v) for k, v in inputs.items()})
    loss_of = _readout(rng, probe)
    return mod, inputs, lambda x: loss_of(forward(x))


def check_module(selector, seed=0, samples_per_group=16, step=STEP, tolerance=TOLERANCE):
    rng = np.random.default_rng(seed)
    mod, inputs, loss_fn = _build(selector, rng)
    tensors = {k: T.Tensor(v, requires_grad=True) for k, v in inputs.items()}
    mod.zero_grad()
    T.backward(loss_fn(tensors))

    groups = [(name, p) for name, p in mod.named_parameters()]
    groups += [(f"input:{k}", t) for k, t in tensors.items()]

    def evaluate():
        with T.no_grad(), T.record_kinks() as kinks:
            value = float(loss_fn({k: T.Tensor(t.data) for k, t in tensors.items()}).item())
        return value, kinks

    _, base_kinks = evaluate()
    results = []
    for name, t in groups:
        analytic_full = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        order = rng.permutation(flat.size)
        analytic, numeric, kinked = [], [], 0
        for i in order:
            if len(numeric) == samples_per_group:
                break
            orig = flat[i]
            flat[i] = orig + step
            plus, kinks_plus = evaluate()
            flat[i] = orig - step
            minus, kinks_minus = evaluate()
            flat[i] = orig
            if kinks_plus != base_kinks or kinks_minus != base_kinks:
                kinked += 1
                continue
            analytic.append(analytic_full.reshape(-1)[i])
            numeric.append((plus - minus) / (2 * step))
        results.append(GroupResult(selector, name, relative_error(analytic, numeric),
                                   len(numeric), tolerance, kinked))
    return results


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    floor = max(0.01 * float(np.max(np.abs(numeric), initial=0.0)), ABS_FLOOR)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))


def run(selector="all", seeds=(0,), **kwargs):
    names = SELECTORS if selector == "all" else (selector,)
    if selector != "all" and selector not in SELECTORS:
        raise UsageError(f"unknown gradcheck selector {selector!r}; choose from all, "
                         + ", ".join(SELECTORS))
    out = []
    for seed in seeds:
        for name in names:
            out.extend(check_module(name, seed, **kwargs))
    return out


def format_table(results):
    width = max([len(r.module) + len(r.group) + 1 for r in results] + [10])
    lines = [f"{'module/group':<{width}}  {'max_rel_err':>12}  n    kinked  status"]
    for r in results:
        label = f"{r.module}/{r.group}"
        lines.append(f"{label:<{width}}  {r.max_rel_error:12.3e}  {r.checked:<4} {r.kinked:<7} "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
