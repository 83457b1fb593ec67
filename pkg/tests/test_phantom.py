from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from lumbarseg.localizer import sensitivity
from lumbarseg.metrics import label_centroids_z
from lumbarseg.phantom import (
    TOY_PHANTOM,
    PhantomConfig,
    gen_phantom,
    gen_suite,
    read_manifest,
    suite_configs,
    tight_box,
)


@pytest.fixture(scope="module")
def toy():
    return gen_phantom(replace(TOY_PHANTOM, seed=11))


def test_deterministic():
    a = gen_phantom(replace(TOY_PHANTOM, seed=3))
    b = gen_phantom(replace(TOY_PHANTOM, seed=3))
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)
    assert a[2] == b[2]
    c = gen_phantom(replace(TOY_PHANTOM, seed=4))
    assert not np.array_equal(a[0].data, c[0].data)


def test_labels_are_single_components(toy):
    _, lab, _ = toy
    for k in range(1, 6):
        _, n = ndimage.label(lab.data == k, structure=np.ones((3, 3, 3)))
        assert n == 1


def test_l1_is_most_superior(toy):
    z = label_centroids_z(toy[1])
    assert sorted(z) == [1, 2, 3, 4, 5]
    assert all(z[k] > z[k + 1] for k in range(1, 5))


def test_box_holds_all_labels_with_margin(toy):
    vol, lab, box = toy
    assert sensitivity(lab, box) == 1.0
    tight = tight_box(lab)
    for lo, tlo in zip(box.lows, tight.lows):
        assert lo == max(tlo - 15, 0)


def test_bone_is_brighter_than_tissue(toy):
    vol, lab, _ = toy
    assert vol.data[lab.data > 0].mean() > 600
    assert vol.data[lab.data == 0].mean() < 400


def test_fracture_flattens_vertebrae():
    cfg = replace(TOY_PHANTOM, seed=5, size_jitter=0.0)
    whole = gen_phantom(cfg)[1]
    crushed = gen_phantom(replace(cfg, fracture_prob=1.0))[1]
    assert (crushed.data > 0).sum() < 0.9 * (whole.data > 0).sum()


def test_extra_sacrum_adds_bone_below_l5():
    cfg = replace(TOY_PHANTOM, seed=6)
    for extra in (False, True):
        vol, lab, _ = gen_phantom(replace(cfg, extra_sacrum=extra))
        z5 = np.nonzero(lab.data == 5)[2].min()
        below = (vol.data[:, :, :z5] > 600).sum()
        if extra:
            assert below > 1.5 * base_below
        else:
            base_below = below


def test_does_not_fit():
    with pytest.raises(ValueError):
        gen_phantom(PhantomConfig(dims=(40, 40, 40)))


def test_suite_flags():
    cases = suite_configs(6, 4, TOY_PHANTOM, seed=1)
    assert [c[1] for c in cases] == ["train"] * 6 + ["test"] * 4
    assert "extra_sacrum" in cases[-1][3] and cases[-1][2].extra_sacrum
    assert sum("fracture" in c[3] for c in cases) == 4
    assert sum("scoliosis" in c[3] for c in cases) == 3


def test_suite_on_disk(tmp_path):
    path = gen_suite(2, 1, TOY_PHANTOM, seed=2, out_dir=str(tmp_path))
    cases = read_manifest(path)
    assert [c.case_id for c in cases] == ["case001", "case002", "case003"]
    assert cases[-1].flags[-1] == "extra_sacrum"
    vol, lab = cases[0].load()
    ref_vol, ref_lab, _ = gen_phantom(suite_configs(2, 1, TOY_PHANTOM, seed=2)[0][2])
    np.testing.assert_array_equal(lab.data, ref_lab.data)
    # images are stored as 16-bit integers
    np.testing.assert_array_equal(vol.data, np.trunc(ref_vol.data))
    assert vol.spacing == (2.5, 2.5, 2.5)
