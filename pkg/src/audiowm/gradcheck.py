"""Finite-difference verification of every autodiff primitive."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import PRIMITIVES, Tensor, precision

TOLERANCE = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |a|, max |n|, 1e-8), taken over the whole tensor."""
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def numeric_grad(fn, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(arrays)
            flat[i] = orig - h
            fm = fn(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def check(build, arrays: list[np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``build`` maps a list of Tensors to a scalar Tensor.
    """
    with precision(np.float64):
        arrays = [np.array(a, dtype=np.float64) for a in arrays]
        leaves = [Tensor(a, requires_grad=True) for a in arrays]
        build(leaves).backward()
        analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

        def scalar(arrs):
            return float(build([Tensor(a) for a in arrs]).data)

        numeric = numeric_grad(scalar, arrays, h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def _projected(out: Tensor, rng) -> Tensor:
    # random linear read-out so every output entry carries a distinct weight
    r = rng.normal(size=out.shape)
    return T.mean(T.mul(out, Tensor(r)))


def primitive_cases(rng) -> dict[str, tuple]:
    """One (build, arrays) test case per registered primitive."""
    n = rng.normal
    return {
        "add": (lambda x: T.add(x[0], x[1]), [n(size=(3, 4)), n(size=(4,))]),
        "sub": (lambda x: T.sub(x[0], x[1]), [n(size=(2, 3, 4)), n(size=(3, 1))]),
        "mul": (lambda x: T.mul(x[0], x[1]), [n(size=(3, 4)), n(size=(1, 4))]),
        "scale": (lambda x: T.scale(x[0], -1.7), [n(size=(5,))]),
        "matmul": (lambda x: T.matmul(x[0], x[1]), [n(size=(2, 3, 4)), n(size=(4, 5))]),
        "tanh": (lambda x: T.tanh(x[0]), [n(size=(3, 4))]),
        "sigmoid": (lambda x: T.sigmoid(x[0]), [n(size=(3, 4))]),
        "gelu": (lambda x: T.gelu(x[0]), [n(size=(3, 4)) * 2]),
        "softmax": (lambda x: T.softmax(x[0]), [n(size=(2, 3, 5))]),
        "layer_norm": (lambda x: T.layer_norm(x[0]), [n(size=(4, 6))]),
        "reshape": (lambda x: T.reshape(x[0], (6, 2)), [n(size=(3, 4))]),
        "transpose": (lambda x: T.transpose(x[0], (2, 0, 1)), [n(size=(2, 3, 4))]),
        "slice": (lambda x: T.take(x[0], (slice(None), slice(1, 3))), [n(size=(3, 4))]),
        "concat": (lambda x: T.concat([x[0], x[1]], axis=1), [n(size=(2, 3)), n(size=(2, 2))]),
        "mean": (lambda x: T.mean(x[0], axis=1), [n(size=(3, 4))]),
        "mean_square": (lambda x: T.mean_square(x[0]), [n(size=(3, 4))]),
    }


_UNARY = ["tanh", "gelu", "sigmoid", "softmax", "layer_norm", "scale", "transpose2", "slicecat"]
_BINARY = ["add", "mul", "matmul", "sub"]


def random_graph(rng, max_nodes: int = 5):
    """A randomly composed graph of at most ``max_nodes`` primitive nodes."""
    n_nodes = int(rng.integers(2, max_nodes + 1))
    plan = [(_UNARY + _BINARY)[int(rng.integers(len(_UNARY) + len(_BINARY)))] for _ in range(n_nodes - 1)]
    arrays = [rng.normal(size=(3, 4))]
    for op in plan:
        if op in _BINARY:
            arrays.append(rng.normal(size=(4, 4)) * 0.7 if op == "matmul" else rng.normal(size=(3, 4)))

    def build(x):
        h = x[0]
        k = 1
        for op in plan:
            if op in _BINARY:
                other = x[k]
                k += 1
                h = getattr(T, op)(h, other)
            elif op == "scale":
                h = T.scale(h, 0.8)
            elif op == "transpose2":
                h = T.transpose(T.transpose(h, (1, 0)), (1, 0))
            elif op == "slicecat":
                h = T.concat([T.take(h, (slice(None), slice(2, 4))), T.take(h, (slice(None), slice(0, 2)))], axis=1)
            else:
                h = getattr(T, op)(h)
        return T.mean_square(h)

    return build, arrays, plan


@dataclass
class GradcheckReport:
    max_error: dict[str, float] = field(default_factory=dict)
    composite_errors: list[float] = field(default_factory=list)
    tolerance: float = TOLERANCE

    @property
    def failures(self) -> list[str]:
        bad = [k for k, v in self.max_error.items() if not v < self.tolerance]
        bad += [f"composite[{i}]" for i, v in enumerate(self.composite_errors) if not v < self.tolerance]
        return bad

    @property
    def worst(self) -> float:
        return max([*self.max_error.values(), *self.composite_errors], default=0.0)

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = [f"{name:12s} max_rel_err={err:.3e} {'ok' if err < self.tolerance else 'FAIL'}"
               for name, err in sorted(self.max_error.items())]
        if self.composite_errors:
            worst = max(self.composite_errors)
            out.append(f"{'composite':12s} max_rel_err={worst:.3e} over {len(self.composite_errors)} graphs "
                       f"{'ok' if worst < self.tolerance else 'FAIL'}")
        return out


def run_gradcheck(seeds=range(20)) -> GradcheckReport:
    report = GradcheckReport()
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for name, (build, arrays) in primitive_cases(rng).items():
            err = check(lambda x, b=build: _projected(b(x), np.random.default_rng(1000 + seed)), arrays)
            report.max_error[name] = max(report.max_error.get(name, 0.0), err)
        build, arrays, _ = random_graph(rng)
        report.composite_errors.append(check(build, arrays))
    missing = set(PRIMITIVES) - set(report.max_error)
    if missing:
        raise RuntimeError(f"no gradcheck case for primitives: {sorted(missing)}")
    return report
