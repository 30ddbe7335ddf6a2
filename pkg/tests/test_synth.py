import numpy as np
import pytest

from plantsplat.errors import ConfigError
from plantsplat.render import render_reference
from plantsplat.synth import (CLUTTER, CUBE, PLANT, SynthSpec, generate_dataset, generate_scene,
                              plant_batch)

SMALL = dict(surface_density=3000, image_width=24, image_height=24)


def test_cube_and_plant_extents():
    s = generate_scene(SynthSpec())
    pos = s.scene.positions.astype(np.float64)
    cube = pos[s.labels == CUBE]
    np.testing.assert_allclose(np.ptp(cube, axis=0), 0.10, atol=1e-7)
    plant = pos[s.labels == PLANT]
    assert np.ptp(plant[:, 2]) == pytest.approx(0.22, abs=1e-7)
    assert s.oracle.height_cm == 22.0 and s.oracle.scale_factor == pytest.approx(100.0)


def test_seeds_change_samples_not_oracle():
    a = generate_scene(SynthSpec(seed=1, **SMALL))
    b = generate_scene(SynthSpec(seed=2, **SMALL))
    assert not np.array_equal(a.scene.positions[:50], b.scene.positions[:50])
    keys = ("scale_factor", "cube_edge_measured", "height_cm", "width1_cm", "width2_cm")
    assert [getattr(a.oracle, k) for k in keys] == [getattr(b.oracle, k) for k in keys]


def test_same_seed_reproducible():
    a = generate_dataset(SynthSpec(seed=5, **SMALL))
    b = generate_dataset(SynthSpec(seed=5, **SMALL))
    assert np.array_equal(a.synth.scene.positions, b.synth.scene.positions)
    assert all(np.array_equal(x.frame.rgb, y.frame.rgb) for x, y in zip(a.views, b.views))
    assert a.split == b.split and np.array_equal(a.points, b.points)


def test_default_dataset_layout():
    d = generate_dataset(SynthSpec(**SMALL))
    assert len(d.views) == 12
    assert d.split.count("train") == 8 and d.split.count("test") == 4
    heights = sorted({round(float(v.camera.center[2]), 6) for v in d.views})
    assert len(heights) == 3


def test_clutter_excluded_from_masks():
    spec = SynthSpec(clutter=True, clutter_splats=2000, **SMALL)
    d = generate_dataset(spec)
    clutter = d.synth.scene.subset(d.synth.labels == CLUTTER)
    fg = d.synth.foreground()
    found = 0
    for v in d.views:
        c = render_reference(clutter, v.camera, (0, 0, 0), limit=len(clutter)).alpha_acc
        f = render_reference(fg, v.camera, (0, 0, 0), limit=len(fg)).alpha_acc
        only = (c > 0.5) & (f == 0.0)
        found += int(only.sum())
        assert np.all(v.frame.alpha[only] == 0.0)
    assert found > 0


@pytest.mark.parametrize("field, value", [("height_cm", -1.0), ("cube_edge_cm", 0.0),
                                          ("cameras_per_ring", 2)])
def test_invalid_spec(field, value):
    with pytest.raises(ConfigError):
        SynthSpec(**{field: value})


def test_plant_batch_distinct():
    specs = plant_batch(5, seed=1)
    assert len({s.height_cm for s in specs}) == 5
    assert all(s.width1_cm >= s.width2_cm for s in specs)
