from __future__ import annotations

from typing import Sequence, Union

import numpy as np
import numpy.typing as npt

Numeric = Union[float, int]
Array = npt.NDArray[np.float64]
IndexArray = Union[npt.NDArray[np.int64], Sequence[int]]
