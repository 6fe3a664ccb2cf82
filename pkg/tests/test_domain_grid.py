import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpp_lab.domain_grid import (
    CellField,
    Domain,
    Field,
    build_domain,
    cell_offsets,
    extend_periodic,
    flat_cell_index,
    outside_radius,
    read_field_csv,
    restrict_to_cell,
    sup_norm_gap,
    write_field_csv,
)
from kpp_lab.errors import ConfigurationError, PreconditionError


def test_grid_shape_and_origin():
    d = build_domain({"L": 5, "h": 0.5, "p": 1})
    assert d.shape == (21,)
    assert d.coords[d.origin_index][0] == 0.0
    assert d.cell.shape == (2,)
    assert d.buffer == pytest.approx(0.5)


def test_lattice_domain():
    d = build_domain({"kind": "lattice", "dim": 2, "R": 6, "p": [2, 3]})
    assert d.shape == (13, 13)
    assert d.cell.shape == (2, 3)
    assert d.spacing == 1.0


@pytest.mark.parametrize(
    "spec, path",
    [
        ({"L": 5, "h": 0.3, "p": 1}, "domain.h"),
        ({"L": 5.5, "h": 0.5, "p": 1}, "domain.L"),
        ({"L": 5, "h": 0.5, "p": 1, "buffer": 5}, "domain.buffer"),
        ({"kind": "lattice", "R": 7, "p": 2}, "domain.R"),
        ({"kind": "lattice", "R": 2.5}, "domain.R"),
        ({"dim": 3, "L": 5, "h": 0.5}, "domain.dim"),
        ({"kind": "torus"}, "domain.kind"),
    ],
)
def test_invalid_domains_name_the_field(spec, path):
    with pytest.raises(ConfigurationError) as exc:
        build_domain(spec)
    assert exc.value.path == path
    assert str(exc.value).startswith(path)


def test_descriptor_roundtrip():
    d = build_domain({"dim": 2, "L": 4, "h": 0.25, "p": [1, 2], "buffer": 1})
    assert Domain.from_descriptor(d.descriptor()) == d


def test_interior_mask_excludes_buffer():
    d = build_domain({"L": 10, "h": 1, "p": 1, "buffer": 3})
    x = d.coords[..., 0]
    assert np.array_equal(d.interior_mask, np.abs(x) <= 7 + 1e-12)


def test_field_is_read_only_and_finite():
    d = build_domain({"L": 2, "h": 0.5, "p": 1})
    u = Field.constant(d, 1.5)
    with pytest.raises(ValueError):
        u.values[0] = 2.0
    with pytest.raises(ValueError):
        Field(d, np.full(d.shape, np.nan))
    with pytest.raises(ValueError):
        Field(d, np.zeros(d.shape), positive_floor=1e-3)


def test_periodic_extension_is_origin_aligned():
    d = build_domain({"L": 3, "h": 0.5, "p": 1.5})
    c = CellField(d.cell, [1.0, 2.0, 3.0])
    u = extend_periodic(c, d)
    x = d.coords[..., 0]
    idx = np.rint(x / 0.5).astype(int) % 3
    assert np.array_equal(u.values, np.array([1.0, 2.0, 3.0])[idx])
    back = restrict_to_cell(u)
    assert np.array_equal(back.values, c.values)


def test_misaligned_cell_is_rejected():
    d = build_domain({"L": 3, "h": 0.5, "p": 1.5})
    other = build_domain({"L": 3, "h": 0.25, "p": 1.5})
    with pytest.raises(PreconditionError):
        extend_periodic(CellField.constant(other.cell, 1.0), d)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(-20, 20))
def test_flat_index_wraps_periodically(m, n, shift):
    d = build_domain({"kind": "lattice", "dim": 2, "R": 20 * m * n, "p": [m, n]})
    base = cell_offsets(d.cell)
    wrapped = flat_cell_index(d.cell, base + np.array([shift * m, shift * n]))
    assert np.array_equal(wrapped, np.arange(d.cell.size))


def test_sup_norm_gap_regions():
    d = build_domain({"L": 10, "h": 1, "p": 1})
    u = Field.from_function(d, lambda x: np.exp(-np.abs(x[..., 0])))
    v = Field.constant(d, 0.0)
    assert sup_norm_gap(u, v) == pytest.approx(1.0)
    assert sup_norm_gap(u, v, outside_radius(3)) == pytest.approx(np.exp(-3))
    with pytest.raises(PreconditionError):
        sup_norm_gap(u, v, outside_radius(100))


def test_field_csv_roundtrip(tmp_path):
    d = build_domain({"dim": 2, "L": 2, "h": 0.5, "p": 1})
    u = Field.from_function(d, lambda x: 1 + np.sin(x[..., 0]) * np.cos(x[..., 1]), t=0.3)
    back = read_field_csv(write_field_csv(u, tmp_path / "u.csv"))
    assert back.domain == d and back.t == 0.3
    assert np.array_equal(back.values, u.values)
