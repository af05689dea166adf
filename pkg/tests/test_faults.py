"""Fault parsing, application semantics, and the fault algebra properties."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hilbench.faults import (
    FaultApplicationError,
    FaultBench,
    FaultScript,
    FaultSpec,
    ScenarioError,
    apply_fault,
    parse_scenario,
    scenario_to_json,
)
from hilbench.waveforms import (
    CamPatternSpec,
    ToothWheelSpec,
    build_cam_table,
    build_crank_table,
)


@pytest.fixture(scope="module")
def crank_table():
    return build_crank_table(ToothWheelSpec())


@pytest.fixture(scope="module")
def cam_table():
    return build_cam_table(CamPatternSpec())


def window_mask(table, tooth):
    """Boolean mask of all samples inside the fault windows of `tooth`."""
    mask = np.zeros(table.n, dtype=bool)
    geo = table.geometry
    if table.channel == "crank":
        windows = [geo.tooth_window(tooth, rev) for rev in (0, 1)]
    else:
        windows = [geo.peak_window(tooth)]
    for start, end in windows:
        lo = math.ceil(start / table.resolution - 1e-9)
        hi = math.ceil(end / table.resolution - 1e-9)
        mask[np.arange(lo, hi) % table.n] = True
    return mask


class TestParseScenario:
    def test_single_missing_tooth(self):
        doc = json.dumps(
            {
                "version": 1,
                "faults": [
                    {"id": "f1", "type": "missing_tooth", "sensor": "crank",
                     "tooth": 27, "activation": "on_start"}
                ],
            }
        )
        script = parse_scenario(doc)
        assert len(script.faults) == 1
        assert script.faults[0].tooth == 27

    def test_empty_fault_list(self):
        script = parse_scenario('{"version": 1, "faults": []}')
        assert script.faults == ()

    def test_out_of_range_tooth(self):
        doc = json.dumps(
            {
                "version": 1,
                "faults": [
                    {"id": "f1", "type": "missing_tooth", "sensor": "crank", "tooth": 61}
                ],
            }
        )
        with pytest.raises(ScenarioError, match="out of range"):
            parse_scenario(doc)

    def test_syntax_error_reports_position(self):
        with pytest.raises(ScenarioError, match="line"):
            parse_scenario('{"version": 1, "faults": [}')

    def test_unknown_type_rejected(self):
        doc = '{"version": 1, "faults": [{"id": "x", "type": "short_circuit"}]}'
        with pytest.raises(ScenarioError, match="unknown fault type"):
            parse_scenario(doc)

    def test_unknown_keys_rejected(self):
        doc = json.dumps(
            {
                "version": 1,
                "faults": [
                    {"id": "f", "type": "missing_tooth", "sensor": "crank",
                     "tooth": 5, "extra": 1}
                ],
            }
        )
        with pytest.raises(ScenarioError, match="unknown keys"):
            parse_scenario(doc)
        with pytest.raises(ScenarioError, match="top-level"):
            parse_scenario('{"version": 1, "faults": [], "bogus": true}')

    def test_bad_factor_rejected(self):
        doc = json.dumps(
            {
                "version": 1,
                "faults": [
                    {"id": "f", "type": "amplitude_scale", "sensor": "crank",
                     "tooth": 5, "factor": -1.0}
                ],
            }
        )
        with pytest.raises(ScenarioError, match="factor"):
            parse_scenario(doc)

    def test_duplicate_ids_rejected(self):
        doc = json.dumps(
            {
                "version": 1,
                "faults": [
                    {"id": "f", "type": "missing_tooth", "sensor": "crank", "tooth": 5},
                    {"id": "f", "type": "missing_tooth", "sensor": "crank", "tooth": 6},
                ],
            }
        )
        with pytest.raises(ScenarioError, match="unique"):
            parse_scenario(doc)

    def test_version_checked(self):
        with pytest.raises(ScenarioError, match="version"):
            parse_scenario('{"version": 2, "faults": []}')

    def test_round_trip(self):
        script = FaultScript(
            faults=(
                FaultSpec(id="a", kind="missing_tooth", sensor="crank", tooth=27),
                FaultSpec(id="b", kind="sync_offset", offset_deg=30.0),
            )
        )
        assert parse_scenario(scenario_to_json(script)) == script


class TestApplyFault:
    def test_missing_tooth_zeroes_both_revolution_images(self, crank_table):
        fault = FaultSpec(id="f", kind="missing_tooth", sensor="crank", tooth=27)
        out = apply_fault(crank_table, fault)
        mask = window_mask(crank_table, 27)
        assert np.all(out.samples[mask] == 0.0)
        assert np.array_equal(out.samples[~mask], crank_table.samples[~mask])

    def test_missing_cam_peak_single_image(self, cam_table):
        fault = FaultSpec(id="f", kind="missing_tooth", sensor="cam", tooth=2)
        out = apply_fault(cam_table, fault)
        mask = window_mask(cam_table, 2)
        assert np.all(out.samples[mask] == 0.0)
        assert np.array_equal(out.samples[~mask], cam_table.samples[~mask])

    def test_amplitude_scale_peak_value(self, crank_table):
        fault = FaultSpec(id="f", kind="amplitude_scale", sensor="crank",
                          tooth=10, factor=0.5)
        out = apply_fault(crank_table, fault)
        mask = window_mask(crank_table, 10)
        assert out.samples[mask].max() == pytest.approx(0.5, abs=1e-12)
        assert np.array_equal(out.samples[~mask], crank_table.samples[~mask])

    def test_partial_noise_statistics(self, crank_table):
        sigma = 0.05
        fault = FaultSpec(id="f", kind="partial_noise", sensor="crank",
                          tooth=28, sigma_volts=sigma, seed=1)
        out = apply_fault(crank_table, fault)
        mask = window_mask(crank_table, 28)
        diff = out.samples[mask] - crank_table.samples[mask]
        # independent statistics pass over the noise the generator injected
        assert abs(np.std(diff) - sigma) < 0.2 * sigma
        assert np.array_equal(out.samples[~mask], crank_table.samples[~mask])

    def test_full_noise_replace_bounds_and_decorrelation(self, cam_table):
        amp = 0.3
        fault = FaultSpec(id="f", kind="full_noise_replace", sensor="cam",
                          tooth=2, noise_amplitude=amp, seed=7)
        out = apply_fault(cam_table, fault)
        mask = window_mask(cam_table, 2)
        window = out.samples[mask]
        assert np.max(np.abs(window)) <= amp
        orig = cam_table.samples[mask]
        corr = np.corrcoef(window, orig)[0, 1]
        assert abs(corr) < 0.3

    def test_width_scale_narrows(self, crank_table):
        fault = FaultSpec(id="f", kind="width_scale", sensor="crank",
                          tooth=10, factor=0.5)
        out = apply_fault(crank_table, fault)
        mask = window_mask(crank_table, 10)
        # pulse energy shrinks, all outside samples untouched
        assert np.abs(out.samples[mask]).sum() < np.abs(crank_table.samples[mask]).sum()
        assert np.array_equal(out.samples[~mask], crank_table.samples[~mask])
        # narrowed pulse is still a full sine period: max stays near amplitude
        # (peak lands up to half a sample off the quarter-period point)
        assert out.samples[mask].max() == pytest.approx(1.0, abs=0.01)

    def test_width_scale_overlap_rejected(self, crank_table):
        fault = FaultSpec(id="f", kind="width_scale", sensor="crank",
                          tooth=10, factor=1.5)
        with pytest.raises(FaultApplicationError, match="overlap"):
            apply_fault(crank_table, fault)

    def test_width_scale_into_index_gap_allowed(self, crank_table):
        # tooth 58's right neighbors (59, 60) are missing: widening fits
        fault = FaultSpec(id="f", kind="width_scale", sensor="crank",
                          tooth=58, factor=1.2)
        with pytest.raises(FaultApplicationError):
            # left neighbor (57) is present, so symmetric widening still overlaps
            apply_fault(crank_table, fault)

    def test_width_scale_cam_widening_allowed(self, cam_table):
        fault = FaultSpec(id="f", kind="width_scale", sensor="cam",
                          tooth=3, factor=1.5)
        out = apply_fault(cam_table, fault)
        assert not np.array_equal(out.samples, cam_table.samples)

    def test_sync_offset_rotates_cam(self, cam_table):
        fault = FaultSpec(id="f", kind="sync_offset", offset_deg=30.0)
        out = apply_fault(cam_table, fault)
        assert np.array_equal(out.samples, np.roll(cam_table.samples, 300))

    def test_sync_offset_invertible(self, cam_table):
        plus = FaultSpec(id="p", kind="sync_offset", offset_deg=30.0)
        minus = FaultSpec(id="m", kind="sync_offset", offset_deg=-30.0)
        out = apply_fault(apply_fault(cam_table, plus), minus)
        assert np.array_equal(out.samples, cam_table.samples)

    def test_global_noise_everywhere(self, crank_table):
        fault = FaultSpec(id="f", kind="global_noise", sensor="crank",
                          sigma_volts=0.01, seed=3)
        out = apply_fault(crank_table, fault)
        assert np.all(out.samples != crank_table.samples)

    def test_channel_mismatch(self, crank_table):
        fault = FaultSpec(id="f", kind="missing_tooth", sensor="cam", tooth=2)
        with pytest.raises(FaultApplicationError, match="targets cam"):
            apply_fault(crank_table, fault)

    def test_purity_input_untouched(self, crank_table):
        before = crank_table.samples.copy()
        apply_fault(
            crank_table,
            FaultSpec(id="f", kind="missing_tooth", sensor="crank", tooth=27),
        )
        assert np.array_equal(crank_table.samples, before)

    def test_seeded_determinism(self, crank_table):
        fault = FaultSpec(id="f", kind="partial_noise", sensor="crank",
                          tooth=5, sigma_volts=0.1, seed=42)
        a = apply_fault(crank_table, fault)
        b = apply_fault(crank_table, fault)
        assert np.array_equal(a.samples, b.samples)


class TestFaultBench:
    def test_apply_then_clear_restores_clean(self):
        bench = FaultBench()
        clean = bench.crank_table.samples.copy()
        bench.apply(FaultSpec(id="f", kind="missing_tooth", sensor="crank", tooth=27))
        assert not np.array_equal(bench.crank_table.samples, clean)
        bench.clear("f")
        assert np.array_equal(bench.crank_table.samples, clean)
        assert bench.active() == ()

    def test_clear_unknown_id(self):
        bench = FaultBench()
        with pytest.raises(ScenarioError, match="unknown fault id"):
            bench.clear("nope")

    def test_clear_one_of_two_equals_clean_plus_other(self):
        bench = FaultBench()
        fa = FaultSpec(id="a", kind="missing_tooth", sensor="crank", tooth=10)
        fb = FaultSpec(id="b", kind="amplitude_scale", sensor="crank",
                       tooth=20, factor=0.5)
        bench.apply(fa)
        bench.apply(fb)
        bench.clear("a")

        other = FaultBench()
        other.apply(fb)
        assert np.array_equal(bench.crank_table.samples, other.crank_table.samples)

    def test_duplicate_id_rejected(self):
        bench = FaultBench()
        bench.apply(FaultSpec(id="f", kind="missing_tooth", sensor="crank", tooth=1))
        with pytest.raises(ScenarioError, match="already active"):
            bench.apply(FaultSpec(id="f", kind="missing_tooth", sensor="crank", tooth=2))

    def test_unseeded_fault_resolves_from_base_seed(self):
        f = FaultSpec(id="n", kind="global_noise", sensor="crank", sigma_volts=0.02)
        b1, b2 = FaultBench(base_seed=9), FaultBench(base_seed=9)
        b1.apply(f)
        b2.apply(f)
        assert np.array_equal(b1.crank_table.samples, b2.crank_table.samples)
        b3 = FaultBench(base_seed=10)
        b3.apply(f)
        assert not np.array_equal(b1.crank_table.samples, b3.crank_table.samples)

    def test_ledger_positions_recorded(self):
        bench = FaultBench()
        entry = bench.apply(
            FaultSpec(id="f", kind="missing_tooth", sensor="crank", tooth=3),
            cycle=4, sample_index=1000, t=0.25,
        )
        assert entry.describe()["applied_cycle"] == 4
        assert bench.active()[0].sample_index == 1000


# ---------------------------------------------------------------------------
# fault algebra properties

PRESENT_TEETH = sorted(set(range(1, 61)) - {59, 60})

crank_tooth = st.sampled_from(PRESENT_TEETH)
cam_tooth = st.integers(min_value=1, max_value=7)


def tooth_fault(id_, sensor, tooth, kind, rng_seed):
    if kind == "missing_tooth":
        return FaultSpec(id=id_, kind=kind, sensor=sensor, tooth=tooth)
    if kind == "amplitude_scale":
        return FaultSpec(id=id_, kind=kind, sensor=sensor, tooth=tooth, factor=0.5)
    if kind == "partial_noise":
        return FaultSpec(id=id_, kind=kind, sensor=sensor, tooth=tooth,
                         sigma_volts=0.05, seed=rng_seed)
    return FaultSpec(id=id_, kind=kind, sensor=sensor, tooth=tooth,
                     noise_amplitude=0.3, seed=rng_seed)


PER_TOOTH_KINDS = ("missing_tooth", "amplitude_scale", "partial_noise",
                   "full_noise_replace")


@pytest.fixture(scope="module")
def coarse_crank():
    return build_crank_table(ToothWheelSpec(), resolution=0.25)


@settings(max_examples=75, deadline=None)
@given(tooth=crank_tooth)
def test_missing_tooth_idempotent(tooth):
    table = build_crank_table(ToothWheelSpec(), resolution=0.25)
    fault = FaultSpec(id="f", kind="missing_tooth", sensor="crank", tooth=tooth)
    once = apply_fault(table, fault)
    twice = apply_fault(once, fault)
    assert np.array_equal(once.samples, twice.samples)


@settings(max_examples=75, deadline=None)
@given(
    t1=crank_tooth,
    t2=crank_tooth,
    k1=st.sampled_from(PER_TOOTH_KINDS),
    k2=st.sampled_from(PER_TOOTH_KINDS),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_disjoint_faults_commute(t1, t2, k1, k2, seed):
    if t1 == t2:
        return
    table = build_crank_table(ToothWheelSpec(), resolution=0.25)
    fa = tooth_fault("a", "crank", t1, k1, seed)
    fb = tooth_fault("b", "crank", t2, k2, seed + 1)
    ab = apply_fault(apply_fault(table, fa), fb)
    ba = apply_fault(apply_fault(table, fb), fa)
    assert np.array_equal(ab.samples, ba.samples)


@settings(max_examples=75, deadline=None)
@given(
    tooth=crank_tooth,
    kind=st.sampled_from(PER_TOOTH_KINDS),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_per_tooth_fault_locality(tooth, kind, seed):
    table = build_crank_table(ToothWheelSpec(), resolution=0.25)
    out = apply_fault(table, tooth_fault("f", "crank", tooth, kind, seed))
    mask = window_mask(table, tooth)
    assert np.array_equal(out.samples[~mask], table.samples[~mask])


@settings(max_examples=75, deadline=None)
@given(
    teeth=st.lists(crank_tooth, min_size=1, max_size=4, unique=True),
    kinds=st.lists(st.sampled_from(PER_TOOTH_KINDS), min_size=4, max_size=4),
    drop=st.integers(min_value=0, max_value=3),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_clear_rebuild_identity(teeth, kinds, drop, seed):
    faults = [
        tooth_fault(f"f{i}", "crank", t, kinds[i % 4], seed + i)
        for i, t in enumerate(teeth)
    ]
    drop = drop % len(faults)

    bench = FaultBench(resolution=0.25)
    for f in faults:
        bench.apply(f)
    bench.clear(faults[drop].id)

    ref = FaultBench(resolution=0.25)
    for i, f in enumerate(faults):
        if i != drop:
            ref.apply(f)
    assert np.array_equal(bench.crank_table.samples, ref.crank_table.samples)
    assert np.array_equal(bench.cam_table.samples, ref.cam_table.samples)
