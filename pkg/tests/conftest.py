import numpy as np
import pytest

from devscore.embedstore import DatasetManifest, ImageRecord
from devscore.params import HyperParams, PromptPair
from devscore.synthgen import SynthConfig, generate


def unit_rows(m):
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def make_record(rng, image_id="img", split="test", label=0, grid=(2, 2), d=4,
                mask=None):
    z = unit_rows(rng.standard_normal((grid[0] * grid[1], d))).astype(np.float32)
    return ImageRecord(image_id, split, label, grid, z, mask)


def make_manifest(rng, n_train=1, n_test=2, grid=(2, 2), d=4, with_masks=True):
    records = []
    for i in range(n_train):
        records.append(make_record(rng, f"train_{i:03d}", "train", 0, grid, d))
    for i in range(n_test):
        mask = None
        if with_masks:
            mask = np.zeros((256, 256), dtype=np.uint8)
            if i % 2 == 1:
                mask[:64, :64] = 255
        records.append(make_record(rng, f"test_{i:03d}", "test", i % 2, grid, d, mask))
    prompts = unit_rows(rng.standard_normal((2, d))).astype(np.float32)
    return DatasetManifest(
        embed_dim=d, class_name="toy", grid=grid, records=tuple(records),
        prompt_normal=prompts[0], prompt_abnormal=prompts[1],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_manifest(rng):
    return make_manifest(rng)


@pytest.fixture(scope="session")
def synth_manifest():
    # shared across tests; treat as read-only
    return generate(SynthConfig(seed=7))


@pytest.fixture
def default_hp():
    return HyperParams()


def zero_delta_prompts(manifest) -> PromptPair:
    d = manifest.embed_dim
    return PromptPair(manifest.prompt_normal, manifest.prompt_abnormal,
                      np.zeros(d), np.zeros(d))
