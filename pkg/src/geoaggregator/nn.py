"""Layer building blocks on top of :mod:`geoaggregator.autodiff`."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, tanhshrink


class Module:
    """Parameter container; parameters are discovered by walking attributes."""

    training: bool = True

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        out.extend(v.named_parameters(f"{full}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if name.startswith("running_") and isinstance(value, np.ndarray):
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_buffers(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        out.extend(v.named_buffers(f"{full}.{i}."))
        return out

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for v in value:
                    if isinstance(v, Module):
                        yield from v.modules()

    def train(self, mode: bool = True):
        for mod in self.modules():
            mod.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class Linear(Module):
    """Affine map ``x @ W + b`` with fan-in uniform initialisation."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, zero: bool = False):
        bound = 1.0 / np.sqrt(n_in)
        w = np.zeros((n_in, n_out)) if zero else rng.uniform(-bound, bound, size=(n_in, n_out))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = None
        if bias:
            b = np.zeros(n_out) if zero else rng.uniform(-bound, bound, size=n_out)
            self.bias = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class Dense2(Module):
    """affine -> Tanhshrink -> affine."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator, zero_last: bool = False):
        self.fc1 = Linear(n_in, n_hidden, rng)
        self.fc2 = Linear(n_hidden, n_out, rng, zero=zero_last)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(tanhshrink(self.fc1(x)))


class MaskedBatchNorm(Module):
    """Per-feature batch normalisation using only rows where ``weight == 1``.

    ``x`` is (..., features) and ``weight`` broadcasts to (..., 1). Rows with
    weight 0 come out as exactly zero.
    """

    def __init__(self, n_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(n_features), requires_grad=True)
        self.beta = Tensor(np.zeros(n_features), requires_grad=True)
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self.momentum = momentum
        self.eps = eps

    def batch_stats(self, x: np.ndarray, weight: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        axes = tuple(range(x.ndim - 1))
        n = np.broadcast_to(weight, x.shape[:-1] + (1,)).sum()
        mean = (x * weight).sum(axis=axes) / n
        var = (((x - mean) * weight) ** 2).sum(axis=axes) / n
        return mean, var

    def __call__(self, x: Tensor, weight: np.ndarray) -> Tensor:
        axes = tuple(range(x.ndim - 1))
        if self.training:
            n = float(np.broadcast_to(weight, x.shape[:-1] + (1,)).sum())
            if n < 2:
                raise ValueError("masked batch norm needs at least two unmasked rows")
            mean = (x * weight).sum(axis=axes) * (1.0 / n)
            centred = (x - mean) * weight
            var = (centred * centred).sum(axis=axes) * (1.0 / n)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean.data
            self.running_var = (1 - m) * self.running_var + m * var.data * n / (n - 1)
            xhat = centred / (var + self.eps).sqrt()
        else:
            xhat = (x - self.running_mean) * (weight / np.sqrt(self.running_var + self.eps))
        return (xhat * self.gamma + self.beta) * weight
