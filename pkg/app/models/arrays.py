"""Immutable numpy-backed pydantic models."""
import json
from typing import Annotated, Any

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, PlainSerializer


def _readonly(value: Any, dtype) -> np.ndarray:
    array = np.array(value, dtype=dtype)
    array.setflags(write=False)
    return array


def _as_float_array(value: Any) -> np.ndarray:
    return _readonly(value, float)


def _as_int_array(value: Any) -> np.ndarray:
    return _readonly(value, np.int64)


def _to_list(array: np.ndarray) -> list:
    return array.tolist()


FloatArray = Annotated[np.ndarray, BeforeValidator(_as_float_array), PlainSerializer(_to_list, return_type=list)]
IntArray = Annotated[np.ndarray, BeforeValidator(_as_int_array), PlainSerializer(_to_list, return_type=list)]


class ArrayModel(BaseModel):
    """Frozen model whose array fields are read-only copies.

    Equality and hashing go through the serialized form so that two models
    holding equal arrays compare equal.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def __eq__(self, other: object) -> bool:
        if type(self) is not type(other):
            return NotImplemented
        return self.model_dump() == other.model_dump()

    def __hash__(self) -> int:
        return hash(json.dumps(self.model_dump(mode="json"), sort_keys=True))
