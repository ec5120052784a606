"""Parameter containers for trainable components."""

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor with a unique name inside its module tree."""

    __slots__ = ("name",)

    def __init__(self, name, data):
        super().__init__(np.asarray(data), requires_grad=True)
        self.name = name


class Module:
    """Base class holding named parameters and nested submodules.

    Subclasses register parameters via :meth:`add_param` and submodules by
    plain attribute assignment.  Parameter names are qualified with dotted
    paths when collected, so every name in :meth:`parameters` is unique.
    """

    def __init__(self):
        self._params = {}
        self._modules = {}

    def __setattr__(self, key, value):
        if isinstance(value, Module):
            self.__dict__.setdefault("_modules", {})[key] = value
        super().__setattr__(key, value)

    def add_param(self, name, data):
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def parameters(self, prefix=""):
        """Yields (qualified_name, Parameter) pairs in registration order."""
        for name, p in self._params.items():
            yield (prefix + name if not prefix else f"{prefix}.{name}"), p
        for mod_name, mod in self._modules.items():
            sub_prefix = mod_name if not prefix else f"{prefix}.{mod_name}"
            yield from mod.parameters(sub_prefix)

    def param_list(self):
        return [p for _, p in self.parameters()]

    def zero_grad(self):
        for _, p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {name: p.numpy() for name, p in self.parameters()}

    def load_state_dict(self, state):
        own = dict(self.parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ContractError(
                f"state mismatch: missing {missing}, unexpected {extra}"
            )
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ContractError(
                    f"parameter {name!r}: stored shape {arr.shape} != {p.shape}"
                )
            p.data = arr
            p.data.setflags(write=False)
            p.zero_grad()

    def num_params(self):
        return sum(p.size for _, p in self.parameters())


def uniform_init(rng, fan_in, shape, dtype=np.float64):
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, shape, dtype=dtype)
