"""Image feature maps with an explicit bottom-origin row convention.

Row index 0 is the BOTTOM image row everywhere in this package; row index
grows upward. Pixels nearer the camera therefore live at smaller row
indices, which is what makes the bottom-up scan meaningful.
"""

from dataclasses import dataclass

from .tensor import Tensor


@dataclass
class FeatureMap:
    """An (H, W, C) feature block plus the row-convention flag."""

    data: Tensor
    bottom_origin: bool = True

    def __post_init__(self):
        if not isinstance(self.data, Tensor):
            self.data = Tensor(self.data)
        if self.data.data.ndim != 3:
            raise ValueError(f"feature map must be (H, W, C), got {self.data.shape}")
        if min(self.data.shape) < 1:
            raise ValueError(f"feature map dims must be positive: {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def array(self):
        """The raw (H, W, C) float64 array."""
        return self.data.data
