import math
import sys

import pytest
from hypothesis import assume, given, settings, strategies as st

from gravcollapse.errors import ConfigurationError, NumericalError, UnitError
from gravcollapse.units import (CONSTANTS, PRESET_NAMES, CSLParams, DPParams, ModelParams,
                                ParticleSpec, RigidBodySpec, ScaleSet, convert,
                                dimensionless_scaling, parse_quantity, preset)


def test_preset_values():
    assert preset("diosi").dp.R0 == 1e-15
    assert preset("ghirardi").dp.R0 == 1e-7
    grw = preset("csl_grw").csl
    assert (grw.gamma, grw.r_c, grw.m0) == (1e-36, 1e-7, CONSTANTS.amu)
    adler = preset("csl_adler").csl
    assert (adler.gamma, adler.r_c, adler.m0) == (1e-28, 1e-7, CONSTANTS.amu)


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_satisfy_invariants(name):
    p = preset(name)
    assert p.dp.R0 > 0 and p.dp.m_r >= 0
    assert p.csl.gamma > 0 and p.csl.r_c > 0 and p.csl.m0 > 0
    assert p.provenance


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        preset("penrose")


@pytest.mark.parametrize("bad", [
    lambda: DPParams(R0=0.0),
    lambda: DPParams(R0=1e-15, m_r=-1.0),
    lambda: CSLParams(gamma=0.0),
    lambda: CSLParams(r_c=-1e-7),
    lambda: ParticleSpec(-1.0),
    lambda: RigidBodySpec(1.0, -1.0),
    lambda: ModelParams("grw"),
    lambda: DPParams(R0=1e-15, coarse_graining="cubic"),
])
def test_invariant_violations(bad):
    with pytest.raises((ConfigurationError, ValueError)):
        bad()


def test_constants_are_frozen():
    with pytest.raises(AttributeError):
        CONSTANTS.G = 1.0


def test_convert_examples():
    assert convert(1.0, "amu", "kg") == 1.66053906660e-27
    assert convert(3.7, "m", "m") == 3.7
    E = 2.0e-23
    assert math.isclose(convert(E, "J", "K_kinetic"), E / (1.5 * CONSTANTS.kB), rel_tol=1e-15)
    assert math.isclose(convert(1.0, "nm", "m"), 1e-9, rel_tol=1e-15)
    assert math.isclose(convert(1e-36, "m^3/s", "cm^3/s"), 1e-30, rel_tol=1e-12)


def test_convert_incompatible():
    with pytest.raises(UnitError):
        convert(1.0, "m", "kg")
    with pytest.raises(UnitError):
        convert(1.0, "parsec", "m")


def test_parse_quantity():
    assert parse_quantity("1e-15 m") == 1e-15
    assert parse_quantity("1amu", "kg") == CONSTANTS.amu
    assert math.isclose(parse_quantity("50 nm", "m"), 5e-8, rel_tol=1e-15)
    with pytest.raises(UnitError):
        parse_quantity("1 s", "m")
    with pytest.raises(UnitError):
        parse_quantity("abc")
    with pytest.raises(UnitError):
        parse_quantity(1.0, "m")


_UNITS = {
    "length": ["m", "cm", "nm", "fm", "um"],
    "mass": ["kg", "g", "amu"],
    "energy": ["J", "eV", "K_kinetic", "kg m^2/s^2"],
}


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(sorted(_UNITS)), st.data(),
       st.floats(min_value=1e-30, max_value=1e30))
def test_conversions_compose(dim, data, x):
    a, b, c = (data.draw(st.sampled_from(_UNITS[dim])) for _ in range(3))
    direct = convert(x, a, c)
    composed = convert(convert(x, a, b), b, c)
    assert math.isclose(direct, composed, rel_tol=1e-12)


def test_scaling_nucleon_time():
    scale = dimensionless_scaling(preset("diosi"), ParticleSpec(CONSTANTS.amu))
    assert scale.length == 1e-15
    # inverse of 9.8458e-16 s^-1
    assert math.isclose(scale.time, 1.0 / 9.845841075692174e-16, rel_tol=1e-12)
    assert 0.5e15 < scale.time < 2e15


def test_scaling_zero_mass():
    with pytest.raises(NumericalError):
        dimensionless_scaling(preset("diosi"), ParticleSpec(0.0))


def test_scaled_units_are_consistent():
    # hbar is one by construction; the mass unit makes p^2/2m an energy
    s = ScaleSet(length=2e-9, time=3.0)
    assert math.isclose(s.to_scaled(CONSTANTS.hbar, length=2, mass=1, time=-1), 1.0, rel_tol=1e-14)
    assert math.isclose(s.momentum**2 / s.mass, s.energy, rel_tol=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(PRESET_NAMES),
       st.floats(min_value=1e-30, max_value=1e-10),
       st.floats(min_value=-1e20, max_value=1e20).filter(lambda v: v != 0),
       st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3))
def test_scaling_round_trip(name, m, value, l, mm, t):
    scale = dimensionless_scaling(preset(name), ParticleSpec(m))
    scaled = scale.to_scaled(value, l, mm, t)
    # subnormal or overflowing intermediates carry no 1e-12 precision to recover
    assume(sys.float_info.min <= abs(scaled) < math.inf)
    back = scale.to_si(scaled, l, mm, t)
    assert math.isclose(back, value, rel_tol=1e-12)
