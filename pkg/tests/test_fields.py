"""Population generators: frozen point values, positivity, mask handling."""

import numpy as np
import pytest

from ldem import fields
from ldem.geometry import make_grid_2d, make_grid_3d


def pts(*rows):
    return np.array(rows, dtype=float)


def test_basic_sinusoidal_point_values():
    v = fields.evaluate("basic_sinusoidal", pts((0.25, 0.0), (0.5, 0.77), (0.75, 0.5)))
    assert v == pytest.approx([3.0, 2.0, 3.0], abs=1e-12)


def test_complex_sinusoidal_matches_direct_formula():
    rng = np.random.default_rng(11)
    c = rng.uniform(0.05, 0.95, size=(50, 2))
    v = fields.evaluate("complex_sinusoidal", c)
    direct = 2.0 + np.sin(np.exp(c[:, 0]) * 2 * np.pi) * np.cos(np.log(c[:, 1]) * np.pi)
    assert np.allclose(v, direct, atol=0)


def test_complex_sinusoidal_rejects_nonpositive_y():
    with pytest.raises(ValueError):
        fields.complex_sinusoidal(pts((0.5, 0.0)))


def test_ring_center_and_crest():
    v = fields.evaluate("ring", pts((0.5, 0.5), (0.75, 0.5), (0.5, 0.25)))
    assert v[0] == pytest.approx(np.exp(-0.5), rel=1e-12)
    assert v[1] == pytest.approx(1.0, abs=1e-15)  # exactly on the crest radius
    assert v[2] == pytest.approx(1.0, abs=1e-15)


def test_ring_narrow_band_parameters():
    # crest still 1, one-sigma point exp(-1/2), centre exp(-R^2/2T^2)
    v = fields.evaluate("ring", pts((0.5, 0.5), (0.8, 0.5), (0.75, 0.5)),
                        radius=0.25, thickness=0.05)
    assert v[0] == pytest.approx(np.exp(-12.5), rel=1e-12)
    assert v[1] == pytest.approx(np.exp(-0.5), rel=1e-12)
    assert v[2] == pytest.approx(1.0, abs=1e-15)


def test_localized_peaks_override_and_closed_boundary():
    v = fields.evaluate("localized_peaks",
                        pts((0.2, 0.75), (0.1, 0.6), (0.7, 0.2), (0.5, 0.5)))
    assert v[0] == 4.0
    assert v[1] == 4.0  # closed rectangle includes its boundary
    assert v[2] == 4.0
    assert v[3] == pytest.approx(2.0 + np.sin(np.pi) * np.cos(np.pi), abs=1e-12)


def test_blended_quadrants_center_and_corners():
    v = fields.evaluate("blended_quadrants",
                        pts((0.5, 0.5), (0.02, 0.98), (0.98, 0.98),
                            (0.02, 0.02), (0.98, 0.02)))
    assert v[0] == pytest.approx(2.625, abs=1e-12)
    assert v[1] == pytest.approx(1.0, abs=1e-6)
    assert v[2] == pytest.approx(2.5, abs=1e-6)
    assert v[3] == pytest.approx(3.0, abs=1e-6)
    assert v[4] == pytest.approx(4.0, abs=1e-6)


def test_extreme_closed_rectangle():
    v = fields.evaluate("extreme",
                        pts((0.5, 0.5), (0.3, 0.4), (0.7, 0.6),
                            (0.299, 0.5), (0.5, 0.601)))
    assert v.tolist() == [10.0, 10.0, 10.0, 0.5, 0.5]


def test_pattern_mask_hits_and_misses_stencil():
    v = fields.evaluate("cu_pattern", pts((0.15, 0.5), (0.5, 0.5), (0.85, 0.5)))
    assert v[0] == 4.0   # C spine
    assert v[1] == 1.0   # gap between the letters
    assert v[2] == 4.0   # U right leg


def test_pattern_mask_custom_parameters(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_text("P2\n2 2\n255\n255 0\n0 0\n")
    # Row 0 is the top: the set pixel covers x in [0, 0.5), y in (0.5, 1].
    v = fields.pattern_mask(pts((0.25, 0.75), (0.75, 0.25)),
                            mask_path=p, rho_base=2.0, delta=5.0)
    assert v.tolist() == [7.0, 2.0]


def test_read_pgm_binary_and_comments(tmp_path):
    p = tmp_path / "b.pgm"
    header = b"P5\n# comment line\n3 2\n255\n"
    p.write_bytes(header + bytes([0, 128, 255, 10, 20, 30]))
    img = fields.read_pgm(p)
    assert img.shape == (2, 3)
    assert img[0, 2] == 1.0
    assert img[0, 1] == pytest.approx(128 / 255)


def test_read_pgm_16bit(tmp_path):
    p = tmp_path / "w.pgm"
    p.write_bytes(b"P5\n1 1\n65535\n" + (40000).to_bytes(2, "big"))
    assert fields.read_pgm(p)[0, 0] == pytest.approx(40000 / 65535)


def test_read_pgm_rejects_other_formats(tmp_path):
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ValueError):
        fields.read_pgm(p)


def test_basic_sinusoidal_3d_point_values():
    v = fields.evaluate("basic_sinusoidal_3d",
                        pts((0.25, 0.0, 0.25), (0.5, 0.5, 0.5)))
    assert v[0] == pytest.approx(2.2, abs=1e-12)
    assert v[1] == pytest.approx(1.2, abs=1e-12)


def test_complex_sinusoidal_3d_matches_direct_formula():
    rng = np.random.default_rng(12)
    c = rng.uniform(0.05, 0.95, size=(30, 3))
    v = fields.evaluate("complex_sinusoidal_3d", c)
    direct = 1.2 + (np.sin(np.exp(c[:, 0]) * 2 * np.pi)
                    * np.cos(np.log(c[:, 1] + 1e-5) * np.pi)
                    * np.sin(2 * np.pi * c[:, 2]))
    assert np.allclose(v, direct, atol=0)


def test_spherical_shell_crest():
    v = fields.evaluate("spherical_shell", pts((0.8, 0.5, 0.5), (0.5, 0.5, 0.5)))
    assert v[0] == pytest.approx(1.0, abs=1e-15)
    assert v[1] == pytest.approx(np.exp(-(0.3 ** 2) / (2 * 0.07 ** 2)), rel=1e-12)


def test_blended_octants_center_and_corners():
    eps = 0.02
    corners = [(x, y, z) for z in (eps, 1 - eps)
               for y in (eps, 1 - eps) for x in (eps, 1 - eps)]
    v = fields.evaluate("blended_octants", pts((0.5, 0.5, 0.5), *corners))
    assert v[0] == pytest.approx(4.5, abs=1e-12)
    assert v[1:] == pytest.approx(np.arange(1.0, 9.0), abs=1e-6)


@pytest.mark.parametrize("name", fields.generator_names(2))
def test_all_2d_generators_positive_on_grid(name):
    grid = make_grid_2d(51)
    v = fields.evaluate(name, grid.centroids())
    assert v.shape == (grid.num_faces,)
    assert np.all(v > 0)


@pytest.mark.parametrize("name", fields.generator_names(3))
def test_all_3d_generators_positive_on_grid(name):
    grid = make_grid_3d(16)
    v = fields.evaluate(name, grid.centroids())
    assert v.shape == (grid.num_cells,)
    assert np.all(v > 0)


def test_evaluate_rejects_unknown_and_wrong_dim():
    with pytest.raises(KeyError):
        fields.evaluate("volcano", pts((0.5, 0.5)))
    with pytest.raises(ValueError):
        fields.evaluate("ring", pts((0.5, 0.5, 0.5)))
