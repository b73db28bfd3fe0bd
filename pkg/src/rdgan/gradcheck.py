"""Finite-difference verification of taped gradients.

Every differentiable op (and any composite built from them) can be checked
by perturbing inputs one element at a time and comparing the central
difference quotient against the gradient the tape produces. Checks should
run in double precision; single precision leaves too little headroom under
the difference quotient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import UsageError
from .rng import Rng
from .tensor import Tape, Tensor, backward


@dataclass
class ParamReport:
    name: str
    checked: int
    max_abs_err: float
    max_rel_err: float
    worst_index: tuple
    passed: bool


@dataclass
class GradcheckReport:
    rtol: float
    atol: float
    params: list[ParamReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def failures(self) -> list[ParamReport]:
        return [p for p in self.params if not p.passed]

    def summary(self) -> str:
        lines = []
        for p in self.params:
            status = "ok" if p.passed else "FAIL"
            lines.append(f"{status:4s} {p.name}: checked {p.checked}, max_abs {p.max_abs_err:.3e}, max_rel {p.max_rel_err:.3e}")
        return "\n".join(lines)


def gradcheck(
    fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    rtol: float = 1e-4,
    atol: float = 1e-7,
    h_base: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[Rng] = None,
) -> GradcheckReport:
    """Compare taped gradients of the scalar ``fn()`` against central differences.

    ``fn`` must be deterministic and read the listed tensors by reference so
    in-place perturbations are visible. Each element of each parameter is
    checked, or ``max_entries`` randomly chosen elements when given. An
    element passes when |numeric - analytic| <= max(atol, rtol * scale) with
    scale the larger magnitude of the pair.
    """
    for name, p in params:
        if p.data.dtype not in (np.float32, np.float64):
            raise UsageError(f"gradcheck: parameter {name} must be float32 or float64, got {p.data.dtype}")
        if not p.requires_grad:
            raise UsageError(f"gradcheck: parameter {name} does not require grad")
    if max_entries is not None and rng is None:
        raise UsageError("gradcheck: max_entries needs an rng to pick elements")

    for _, p in params:
        p.grad = None
    with Tape() as tape:
        loss = fn()
    backward(loss)
    analytic = {}
    for name, p in params:
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        p.grad = None
    tape.release()

    def eval_loss() -> float:
        out = fn()
        if out.size != 1:
            raise UsageError(f"gradcheck: fn must return a scalar, got shape {tuple(out.shape)}")
        return float(out.data.reshape(()))

    report = GradcheckReport(rtol=rtol, atol=atol)
    for name, p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries is not None and max_entries < n:
            chosen = np.sort(rng.integers(0, n, size=max_entries))
            chosen = np.unique(chosen)
        else:
            chosen = np.arange(n)
        ana_flat = analytic[name].reshape(-1)
        max_abs = 0.0
        max_rel = 0.0
        worst = (0,)
        passed = True
        for i in chosen:
            theta = flat[i]
            h = h_base * max(1.0, abs(theta))
            flat[i] = theta + h
            f_plus = eval_loss()
            flat[i] = theta - h
            f_minus = eval_loss()
            flat[i] = theta
            num = (f_plus - f_minus) / (2.0 * h)
            ana = ana_flat[i]
            abs_err = abs(num - ana)
            scale = max(abs(num), abs(ana))
            rel_err = abs_err / scale if scale > 0 else 0.0
            if abs_err > max(atol, rtol * scale):
                passed = False
            if abs_err > max_abs:
                max_abs = abs_err
            # where both gradients are ~0 the ratio is noise over noise;
            # report relative error only at meaningful magnitudes
            if scale > atol and rel_err > max_rel:
                max_rel = rel_err
                worst = np.unravel_index(int(i), p.shape)
        report.params.append(
            ParamReport(
                name=name,
                checked=len(chosen),
                max_abs_err=max_abs,
                max_rel_err=max_rel,
                worst_index=worst,
                passed=passed,
            )
        )
    return report


# ---------------------------------------------------------------------------
# the standard suite: one small case per differentiable primitive, plus the
# full generator-into-discriminator composite

PRECISIONS = ("single", "double")


def _merge(report: GradcheckReport, case: str, sub: GradcheckReport) -> None:
    for p in sub.params:
        report.params.append(
            ParamReport(
                name=f"{case}/{p.name}",
                checked=p.checked,
                max_abs_err=p.max_abs_err,
                max_rel_err=p.max_rel_err,
                worst_index=p.worst_index,
                passed=p.passed,
            )
        )


def standard_suite(
    rtol: float = 1e-4,
    atol: float = 1e-7,
    precision: str = "double",
    max_entries: int = 6,
    seed: int = 0,
) -> GradcheckReport:
    """Finite-difference checks for every primitive and a full G-into-D pass.

    Single precision is allowed but leaves little headroom under the
    difference quotient; expect failures below rtol ~1e-2 there.
    """
    from . import ops
    from .discriminator import D3Config, disc_forward, init_discriminator
    from .generator import RDNConfig, generate_video, init_rdn
    from .tensor import ParameterSet, Tensor, add, broadcast, clip, concat_channels, mul, neg, reshape, stack, sub, tlog, tmean, tsum

    if precision not in PRECISIONS:
        raise UsageError(f"precision must be one of {PRECISIONS}, got {precision!r}")
    dtype = np.float64 if precision == "double" else np.float32
    h_base = 1e-5 if precision == "double" else 1e-2
    draw = np.random.default_rng(seed)
    pick = Rng(seed + 1)

    def tensor(*shape, offset=0.0):
        data = draw.normal(size=shape).astype(dtype)
        if offset:
            # push values away from a kink at zero
            data = data + offset * np.sign(data) + (data == 0) * offset
        return Tensor(data, requires_grad=True)

    def weighted(make):
        # random cotangent so every output element matters, frozen on the
        # first call: fn must stay the same function across evaluations
        holder = {}

        def fn():
            out = make()
            if "r" not in holder:
                holder["r"] = Tensor(draw.normal(size=out.shape).astype(dtype))
            return tsum(mul(out, holder["r"]))

        return fn

    report = GradcheckReport(rtol=rtol, atol=atol)
    cases = []

    x = tensor(3, 4)
    w = tensor(5, 4)
    b = tensor(5)
    cases.append(("linear", lambda: ops.linear(x, w, b), [("x", x), ("w", w), ("b", b)]))

    xc = tensor(2, 3, 6, 6)
    kc = tensor(4, 3, 4, 4)
    cases.append(("conv2d", lambda: ops.conv2d(xc, kc, stride=2, pad=1), [("x", xc), ("k", kc)]))

    xd = tensor(2, 4, 3, 3)
    kd = tensor(4, 3, 4, 4)
    cases.append(("deconv2d", lambda: ops.deconv2d(xd, kd, stride=2, pad=1), [("x", xd), ("k", kd)]))

    x3 = tensor(2, 2, 3, 4, 4)
    k3 = tensor(3, 2, 3, 3, 3)
    cases.append(("conv3d", lambda: ops.conv3d(x3, k3, stride=1, pad=1), [("x", x3), ("k", k3)]))

    xp3 = tensor(2, 2, 2, 4, 4)
    cases.append(("maxpool3d", lambda: ops.maxpool3d(xp3), [("x", xp3)]))
    xp2 = tensor(2, 3, 4, 4)
    cases.append(("maxpool2d", lambda: ops.maxpool2d(xp2), [("x", xp2)]))

    xb = tensor(4, 3, 5)
    gamma = tensor(3, offset=0.5)
    beta = tensor(3)

    def bn_train():
        # fresh running stats per call: train mode writes them in place, and
        # a drifting buffer would corrupt the difference quotient
        stats = ops.RunningStats(Tensor(np.zeros(3, dtype)), Tensor(np.ones(3, dtype)))
        return ops.batchnorm(xb, gamma, beta, "train", stats)

    cases.append(("batchnorm_train", bn_train, [("x", xb), ("gamma", gamma), ("beta", beta)]))

    fixed_stats = ops.RunningStats(
        Tensor(draw.normal(size=3).astype(dtype)),
        Tensor((draw.uniform(0.5, 2.0, size=3)).astype(dtype)),
    )
    cases.append(
        ("batchnorm_eval", lambda: ops.batchnorm(xb, gamma, beta, "eval", fixed_stats), [("x", xb), ("gamma", gamma), ("beta", beta)])
    )

    xr = tensor(3, 5, offset=0.2)
    cases.append(("relu", lambda: ops.relu(xr), [("x", xr)]))
    cases.append(("leaky_relu", lambda: ops.leaky_relu(xr, 0.2), [("x", xr)]))
    xs = tensor(3, 5)
    cases.append(("sigmoid", lambda: ops.sigmoid(xs), [("x", xs)]))
    cases.append(("tanh", lambda: ops.tanh(xs), [("x", xs)]))

    xdo = tensor(4, 6)
    cases.append(("dropout", lambda: ops.dropout(xdo, 0.4, Rng(7), "train"), [("x", xdo)]))

    logits = tensor(4, 5)
    labels = np.array([0, 2, 4, 1])
    cases.append(("cross_entropy", lambda: ops.cross_entropy(logits, labels), [("logits", logits)]))

    a = tensor(3, 4)
    b2 = tensor(4)
    cases.append(("add_broadcast", lambda: add(a, b2), [("a", a), ("b", b2)]))
    cases.append(("sub", lambda: sub(a, b2), [("a", a), ("b", b2)]))
    cases.append(("mul", lambda: mul(a, b2), [("a", a), ("b", b2)]))
    cases.append(("neg", lambda: neg(a), [("a", a)]))

    xclip = tensor(3, 4, offset=0.1)
    cases.append(("clip", lambda: clip(xclip, -3.0, 3.0), [("x", xclip)]))
    xlog = Tensor(draw.uniform(0.5, 2.0, size=(3, 4)).astype(dtype), requires_grad=True)
    cases.append(("tlog", lambda: tlog(xlog), [("x", xlog)]))
    cases.append(("tmean", lambda: tmean(mul(a, a)), [("a", a)]))

    ca = tensor(2, 3, 4, 4)
    cb = tensor(2, 2, 4, 4)
    cases.append(("concat_channels", lambda: concat_channels(ca, cb), [("a", ca), ("b", cb)]))
    s1, s2, s3 = tensor(2, 3), tensor(2, 3), tensor(2, 3)
    cases.append(("stack", lambda: stack([s1, s2, s3], axis=1), [("a", s1), ("b", s2), ("c", s3)]))
    xbr = tensor(3, 1, 4)
    cases.append(("broadcast", lambda: broadcast(xbr, (3, 5, 4)), [("x", xbr)]))
    cases.append(("reshape", lambda: reshape(a, (4, 3)), [("a", a)]))

    for case, make, params in cases:
        _merge(report, case, gradcheck(weighted(make), params, rtol=rtol, atol=atol, h_base=h_base, max_entries=max_entries, rng=pick))

    # composite: z and condition through the full generator, its video
    # through the full discriminator, in train mode
    gcfg = RDNConfig(levels=2, timesteps=2, noise_dim=5, cond_dim=3, top_hidden_dim=8, base_channels=(6, 4), base_size=2, text_raw_dim=6)
    dcfg = D3Config(blocks=1, channels=(4,), cond_dim=3, timesteps=2, frame_size=gcfg.frame_size, text_raw_dim=6)
    g_params = init_rdn(gcfg, Rng(seed + 2), dtype=dtype)
    d_params = init_discriminator(dcfg, Rng(seed + 3), dtype=dtype)
    z = Tensor(draw.normal(size=(2, gcfg.noise_dim)).astype(dtype))
    cond = Tensor(draw.normal(size=(2, gcfg.cond_dim)).astype(dtype))
    r = Tensor(draw.normal(size=(2,)).astype(dtype))

    def composite():
        video = generate_video(g_params, gcfg, z, cond, mode="train")
        scores = disc_forward(d_params, dcfg, video, cond, mode="train")
        return tsum(mul(scores, r))

    both = list(g_params.trainable()) + list(d_params.trainable())
    _merge(report, "generator_into_discriminator", gradcheck(composite, both, rtol=rtol, atol=atol, h_base=h_base, max_entries=3, rng=pick))
    return report
