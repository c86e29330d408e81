import numpy as np
import pytest
from PIL import Image


def write_image(path, size=(64, 64), color=(120, 120, 120), noise_seed=None,
                defect_box=None):
    """Flat-color test image with optional noise and a bright defect box."""
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.full((size[1], size[0], 3), color, dtype=np.uint8)
    if noise_seed is not None:
        rng = np.random.default_rng(noise_seed)
        arr = np.clip(arr + rng.integers(-20, 21, arr.shape), 0, 255).astype(np.uint8)
    if defect_box is not None:
        y0, y1, x0, x1 = defect_box
        arr[y0:y1, x0:x1] = (250, 30, 30)
    Image.fromarray(arr).save(path)
    return arr


def write_mask(path, size=(64, 64), box=None):
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.zeros((size[1], size[0]), dtype=np.uint8)
    if box is not None:
        y0, y1, x0, x1 = box
        arr[y0:y1, x0:x1] = 255
    Image.fromarray(arr).save(path)
    return arr


def make_class_tree(root, class_name, n_train=2, n_test_good=2, n_defect=2,
                    defect_category="broken", size=(64, 64)):
    """Benchmark-layout class directory with planted defects and masks."""
    class_dir = root / class_name
    for i in range(n_train):
        write_image(class_dir / "train" / "good" / f"{i:03d}.png",
                    size=size, noise_seed=i)
    for i in range(n_test_good):
        write_image(class_dir / "test" / "good" / f"{i:03d}.png",
                    size=size, noise_seed=100 + i)
    box = (8, 24, 8, 24)
    for i in range(n_defect):
        write_image(class_dir / "test" / defect_category / f"{i:03d}.png",
                    size=size, noise_seed=200 + i, defect_box=box)
        write_mask(class_dir / "ground_truth" / defect_category / f"{i:03d}_mask.png",
                   size=size, box=box)
    return class_dir


@pytest.fixture
def bench_root(tmp_path):
    make_class_tree(tmp_path, "bottle")
    return tmp_path
