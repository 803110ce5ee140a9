"""Finite-difference fixtures covering every differentiable op.

Each entry builds float64 parameter blocks and a scalar loss closure suitable
for check_gradients. Shared by the per-op unit tests and the full-suite
acceptance gate so both always agree on what "every op" means.
"""

from __future__ import annotations

import numpy as np

from coopbeam.autodiff import (
    DiffTensor,
    ParamBlock,
    add,
    bce_with_logits,
    conv2d,
    cross_entropy_with_logits,
    div,
    gather_rows,
    gelu,
    getitem,
    global_mean_pool,
    instance_norm,
    layer_norm,
    log_softmax,
    logaddexp,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    sdpa,
    sigmoid,
    softmax,
    softplus,
    sub,
    sum_,
    take0,
    tanh,
    transpose,
)


def _param(rng, shape, name):
    return ParamBlock(name, DiffTensor(rng.standard_normal(shape), requires_grad=True))


def _project(rng, out):
    """Contract an op output to a scalar with a fixed random weighting."""
    w = DiffTensor(rng.standard_normal(out.data.shape))
    return sum_(mul(out, w))


def op_cases():
    """(name, build) pairs; build(rng) -> (loss_fn, blocks)."""

    def unary(op, shape=(3, 4), transform=None):
        def build(rng):
            a = _param(rng, shape, "a")
            if transform is not None:
                a.tensor.data[:] = transform(a.tensor.data)
            proj = np.random.default_rng(0).standard_normal(shape)

            def loss_fn():
                return sum_(mul(op(a.tensor), DiffTensor(proj)))

            return loss_fn, [a]

        return build

    def binary(op, sa=(3, 4), sb=(3, 4)):
        def build(rng):
            a = _param(rng, sa, "a")
            b = _param(rng, sb, "b")
            out_shape = np.broadcast_shapes(sa, sb)
            proj = np.random.default_rng(0).standard_normal(out_shape)

            def loss_fn():
                return sum_(mul(op(a.tensor, b.tensor), DiffTensor(proj)))

            return loss_fn, [a, b]

        return build

    def build_matmul(rng):
        a = _param(rng, (2, 3, 4), "a")
        b = _param(rng, (4, 5), "b")
        proj = np.random.default_rng(0).standard_normal((2, 3, 5))

        def loss_fn():
            return sum_(mul(matmul(a.tensor, b.tensor), DiffTensor(proj)))

        return loss_fn, [a, b]

    def build_reshape(rng):
        a = _param(rng, (2, 6), "a")

        def loss_fn():
            return _project(np.random.default_rng(0), reshape(a.tensor, (3, 4)))

        return loss_fn, [a]

    def build_transpose(rng):
        a = _param(rng, (2, 3, 4), "a")

        def loss_fn():
            return _project(np.random.default_rng(0), transpose(a.tensor, (2, 0, 1)))

        return loss_fn, [a]

    def build_getitem(rng):
        a = _param(rng, (4, 6), "a")

        def loss_fn():
            return _project(np.random.default_rng(0), getitem(a.tensor, (slice(1, 3), slice(None, None, 2))))

        return loss_fn, [a]

    def build_take0(rng):
        a = _param(rng, (5, 3), "a")
        idx = np.asarray([0, 2, 2, 4])

        def loss_fn():
            return _project(np.random.default_rng(0), take0(a.tensor, idx))

        return loss_fn, [a]

    def build_gather_rows(rng):
        a = _param(rng, (4, 6), "a")
        idx = np.asarray([1, 5, 0, 3])

        def loss_fn():
            return _project(np.random.default_rng(0), gather_rows(a.tensor, idx))

        return loss_fn, [a]

    def build_sum_axis(rng):
        a = _param(rng, (3, 4, 2), "a")

        def loss_fn():
            return _project(np.random.default_rng(0), sum_(a.tensor, axis=1, keepdims=True))

        return loss_fn, [a]

    def build_mean_axes(rng):
        a = _param(rng, (3, 4, 2), "a")

        def loss_fn():
            return _project(np.random.default_rng(0), mean(a.tensor, axis=(0, 2)))

        return loss_fn, [a]

    def build_layer_norm(rng):
        a = _param(rng, (3, 6), "a")
        g = _param(rng, (6,), "g")
        b = _param(rng, (6,), "b")

        def loss_fn():
            return _project(np.random.default_rng(0), layer_norm(a.tensor, g.tensor, b.tensor))

        return loss_fn, [a, g, b]

    def build_instance_norm(rng):
        a = _param(rng, (2, 3, 4, 5), "a")

        def loss_fn():
            return _project(np.random.default_rng(0), instance_norm(a.tensor, n_axes=2))

        return loss_fn, [a]

    def build_conv2d(rng):
        x = _param(rng, (2, 2, 5, 5), "x")
        w = _param(rng, (3, 2, 3, 3), "w")
        b = _param(rng, (3,), "b")

        def loss_fn():
            return _project(
                np.random.default_rng(0),
                conv2d(x.tensor, w.tensor, b.tensor, stride=2, padding=1),
            )

        return loss_fn, [x, w, b]

    def build_pool(rng):
        a = _param(rng, (2, 3, 4, 5), "a")

        def loss_fn():
            return _project(np.random.default_rng(0), global_mean_pool(a.tensor))

        return loss_fn, [a]

    def build_sdpa(rng):
        q = _param(rng, (2, 2, 4, 3), "q")
        k = _param(rng, (2, 2, 4, 3), "k")
        v = _param(rng, (2, 2, 4, 3), "v")
        mask = np.triu(np.full((4, 4), -1e9), k=1)

        def loss_fn():
            return _project(np.random.default_rng(0), sdpa(q.tensor, k.tensor, v.tensor, mask))

        return loss_fn, [q, k, v]

    def build_cross_entropy(rng):
        a = _param(rng, (5, 7), "logits")
        labels = np.asarray([0, 3, 6, 2, 2])

        def loss_fn():
            return cross_entropy_with_logits(a.tensor, labels)

        return loss_fn, [a]

    def build_bce(rng):
        a = _param(rng, (6,), "logits")
        targets = np.asarray([0.0, 1.0, 1.0, 0.0, 0.5, 1.0])

        def loss_fn():
            return bce_with_logits(a.tensor, targets)

        return loss_fn, [a]

    return [
        ("add_broadcast", binary(add, (3, 4), (4,))),
        ("sub", binary(sub)),
        ("neg", unary(neg)),
        ("mul_broadcast", binary(mul, (3, 4), (3, 1))),
        ("div", binary(lambda a, b: div(a, b), (3, 4), (3, 4))),
        ("matmul_batched", build_matmul),
        ("reshape", build_reshape),
        ("transpose", build_transpose),
        ("getitem_slice", build_getitem),
        ("take0", build_take0),
        ("gather_rows", build_gather_rows),
        ("sum_axis_keepdims", build_sum_axis),
        ("mean_axes", build_mean_axes),
        ("tanh", unary(tanh)),
        ("sigmoid", unary(sigmoid)),
        ("gelu", unary(gelu)),
        ("softplus", unary(softplus)),
        ("logaddexp", binary(logaddexp)),
        ("softmax", unary(softmax)),
        ("log_softmax", unary(log_softmax)),
        ("layer_norm", build_layer_norm),
        ("instance_norm", build_instance_norm),
        ("conv2d_strided_padded", build_conv2d),
        ("global_mean_pool", build_pool),
        ("sdpa_masked", build_sdpa),
        ("cross_entropy_with_logits", build_cross_entropy),
        ("bce_with_logits", build_bce),
    ]


def run_case(name, build, eps=1e-4):
    from coopbeam.autodiff import check_gradients

    rng = np.random.default_rng(hash(name) % 2**32)
    loss_fn, blocks = build(rng)
    if name == "div":
        blocks[1].tensor.data[:] = np.sign(blocks[1].tensor.data) * (
            np.abs(blocks[1].tensor.data) + 0.5
        )
    return check_gradients(loss_fn, blocks, eps=eps)
