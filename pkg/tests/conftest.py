import numpy as np
import pytest
import torch

from augsweep.imagecore import ImageBuffer

# bitwise-reproducible torch math needs a fixed thread count
torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h, w, c=1):
    return ImageBuffer(rng.integers(0, 256, (h, w, c), dtype=np.uint8))


@pytest.fixture
def tiny_model_cfg():
    from augsweep.nn.model import ModelConfig

    return ModelConfig(input_size=32, stage_channels=(8, 8, 16, 16), stage_depths=(1, 1, 2, 2),
                       attention_dim=4, attention_heads=2, num_classes=3, stem_channels=8,
                       head_width=8, expand_ratio=2.0)
