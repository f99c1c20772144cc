import contextlib
import hashlib
import json
import logging
import typing
from collections.abc import Iterator

import torch
from torch import nn

logger = logging.getLogger(__name__)


def to_dict(obj) -> dict:
    """Creates a dictionary from the object without private attributes."""
    return {k: v for k, v in vars(obj).items() if not k.startswith("_")}


class HasPrettyRepr:
    """A base class that contains human readable representation of the object."""

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in to_dict(self).items())
        return f"{self.__class__.__name__}({params})"


def canonical_json(obj: typing.Any) -> str:
    """Serializes `obj` the same way every time.

    >>> canonical_json({"b": 1, "a": [1, 2]})
    '{"a":[1,2],"b":1}'
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_json(obj: typing.Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def snapshot_parameters(module: nn.Module) -> dict[str, torch.Tensor]:
    """Detached copies of every named parameter and buffer."""
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def tensor_digest(tensors: typing.Mapping[str, torch.Tensor]) -> str:
    """Digest over the raw bytes of the tensors, in key order."""
    h = hashlib.sha256()
    for key in sorted(tensors):
        t = tensors[key].detach().cpu().contiguous()
        h.update(key.encode("utf-8"))
        h.update(str(t.dtype).encode("ascii"))
        h.update(str(tuple(t.shape)).encode("ascii"))
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def parameter_digest(module: nn.Module) -> str:
    return tensor_digest(module.state_dict())


@contextlib.contextmanager
def frozen(*modules: nn.Module) -> Iterator[None]:
    """Temporarily turns off gradients for the modules' parameters."""
    saved = [(p, p.requires_grad) for m in modules for p in m.parameters()]
    for p, _ in saved:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


@contextlib.contextmanager
def seeded(seed: int) -> Iterator[None]:
    """Runs the block under a fixed torch seed without leaking RNG state."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def resolve_dtype(name: str) -> torch.dtype:
    dtypes = {"float32": torch.float32, "float64": torch.float64}
    return dtypes[name]


if __name__ == "__main__":
    import doctest

    doctest.testmod()
