import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqsep import (
    SCENARIOS,
    CouplingSpec,
    InputSpec,
    LineSpectrum,
    OutputSpec,
    PlantConfig,
    PlantConfigError,
    RationalModel,
    SampledRecord,
    bohr_coefficients,
    gen_disjoint_frequencies,
    gen_frequency_family,
    leakage_bound,
    load_plant_config,
    plant_config_to_obj,
    project_onto,
    reconstruct,
    scenario,
    semiring_check,
    simulate,
    synthesize,
    write_realization_csv,
)
from freqsep.spectrum import detect_lines

from helpers import cosines


class TestFrequencyGeneration:
    def test_single(self):
        s = gen_disjoint_frequencies(1, 2.0, 3.0, 0.5, seed=4)
        assert len(s) == 1 and 2.0 <= s.freqs[0] <= 3.0

    def test_gaps(self):
        s = gen_disjoint_frequencies(8, 0.5, 10.0, 0.2, seed=9)
        diffs = np.abs(s.freqs[:, None] - s.freqs[None, :])[~np.eye(8, dtype=bool)]
        assert np.all(diffs >= 0.2) and s.freqs.min() >= 0.5 and s.freqs.max() <= 10.0

    def test_disjoint_bands_form_semiring(self):
        a = gen_disjoint_frequencies(6, 0.5, 5.0, 0.2, seed=1)
        b = gen_disjoint_frequencies(6, 6.0, 10.0, 0.2, seed=2)
        assert semiring_check([a, b.with_delta(a.delta)])

    def test_infeasible(self):
        with pytest.raises(ValueError, match="cannot place"):
            gen_disjoint_frequencies(10, 0.0, 1.0, 0.2)

    def test_seeded(self):
        assert gen_disjoint_frequencies(5, 0, 10, 0.3, seed=3).equals(gen_disjoint_frequencies(5, 0, 10, 0.3, seed=3))

    @given(st.integers(0, 10_000), st.lists(st.integers(0, 6), min_size=2, max_size=5))
    def test_family_is_gap_separated(self, seed, counts):
        sets = gen_frequency_family(counts, 0.5, 20.0, 0.3, seed)
        allf = np.sort(np.concatenate([s.freqs for s in sets]))
        assert np.all(np.diff(allf) >= 0.3)
        assert [len(s) for s in sets] == counts
        assert semiring_check([s.with_delta(0.29) for s in sets])


class TestSynthesize:
    def test_empty(self):
        r = synthesize(LineSpectrum(), 1, 10.0, 0.1)
        assert r.count == 101 and np.all(r.samples == 0)

    def test_round_trip(self):
        spec = cosines([1.7], [2.0])
        r = synthesize(spec, 11, 200.0, 0.05)
        c = project_onto(r, [1.7]).components[0]
        assert abs(abs(c.amplitude) - 1.0) <= leakage_bound(spec, 1.7, 200.0, 0.05, exclude=1e-9)

    def test_seeds_change_phases_not_spectrum(self):
        spec = cosines([1.0, 2.5], [1.0, 0.5])
        a, b = synthesize(spec, 1, 200.0, 0.05), synthesize(spec, 2, 200.0, 0.05)
        assert not np.allclose(a.samples, b.samples)
        fa, _ = detect_lines(a, 0.5, 3.0)
        fb, _ = detect_lines(b, 0.5, 3.0)
        assert len(fa) == len(fb) == 2
        assert np.all(np.abs(fa.freqs - fb.freqs) <= fa.delta)

    def test_aliasing_rejected(self):
        with pytest.raises(PlantConfigError, match="Nyquist"):
            synthesize(cosines([40.0], [1.0]), 1, 10.0, 0.1)


def _unity_plant(**kw):
    base = dict(
        inputs=[InputSpec("x", cosines([1.0, 2.0], [1.0, 0.5]))],
        outputs=[OutputSpec("y")],
        channels={("x", "y"): RationalModel.normalized([1.0], [1.0])},
        duration=100.0,
        sample_period=0.1,
        seed=3,
    )
    base.update(kw)
    return PlantConfig(**base)


class TestSimulate:
    def test_unity_channel(self):
        real = simulate(_unity_plant())
        assert np.allclose(real.outputs[0].samples, real.inputs[0].samples, atol=1e-12)

    def test_lag_channel_amplitudes(self):
        model = RationalModel.normalized([2.0], [1.0, 0.5])
        real = simulate(_unity_plant(channels={("x", "y"): model}))
        out = real.exact_outputs["y"]
        inp = real.exact_inputs["x"]
        assert np.allclose(np.abs(out.amplitudes), np.abs(model.response(inp.omegas)) * np.abs(inp.amplitudes))

    def test_bit_reproducible(self):
        a, b = simulate(scenario("correlated-3x2", 4)), simulate(scenario("correlated-3x2", 4))
        for ra, rb in zip(a.inputs + a.outputs, b.inputs + b.outputs):
            assert np.array_equal(ra.samples, rb.samples)

    def test_common_timebase(self):
        real = simulate(scenario("independent-2x1", 1))
        recs = real.inputs + real.outputs
        assert len({(r.count, r.sample_period, r.start_time) for r in recs}) == 1

    def test_coupling_passes_through_both_channels(self):
        cfg = scenario("correlated-3x2", 1)
        real = simulate(cfg)
        for (q, r), spec in real.coupling:
            if not len(spec):
                continue
            for p in cfg.output_labels:
                got = real.coupling_outputs[p]
                gain = cfg.response(q, p, spec.omegas) + cfg.response(r, p, spec.omegas)
                idx = np.searchsorted(got.omegas, spec.omegas)
                assert np.allclose(got.amplitudes[idx], spec.amplitudes * gain)
        x1 = real.input("x1")
        injected = real.coupling_into("x1")
        proj = bohr_coefficients(x1, injected.omegas)
        assert np.allclose(proj, injected.amplitudes, atol=0.01)

    def test_output_components_orthogonal(self):
        cfg = scenario("correlated-3x2", 2)
        real = simulate(cfg)
        T, dt = cfg.duration, cfg.sample_period
        for p in cfg.output_labels:
            parts = [real.exact_outputs[p], real.coupling_outputs[p], real.output_noise[p]]
            for i in range(3):
                for j in range(i + 1, 3):
                    a, b = parts[i], parts[j]
                    # projections of one component at the other's lines stay within leakage
                    rec = SampledRecord(reconstruct(a, real.times), dt)
                    for w in b.omegas:
                        assert abs(bohr_coefficients(rec, [w])[0]) <= leakage_bound(a, w, T, dt) + 1e-12

    @pytest.mark.parametrize(
        "change,match",
        [
            (dict(inputs=[InputSpec("x", cosines([1.0], [1.0])), InputSpec("z", cosines([1.01], [1.0]))]), "overlap"),
            (dict(inputs=[InputSpec("x", cosines([1.0], [1.0]), cosines([1.02], [0.1]))]), "overlap"),
            (dict(inputs=[InputSpec("x", cosines([40.0], [1.0]))]), "Nyquist"),
            (dict(channels={("x", "q"): RationalModel.normalized([1.0], [1.0])}), "unknown"),
            (dict(duration=10.05), "multiple"),
        ],
    )
    def test_validation(self, change, match):
        with pytest.raises(PlantConfigError, match=match):
            simulate(_unity_plant(**change))

    def test_coupling_must_avoid_exact_lines(self):
        cfg = _unity_plant(
            inputs=[InputSpec("x", cosines([1.0], [1.0])), InputSpec("z", cosines([3.0], [1.0]))],
            coupling=[CouplingSpec(("x", "z"), cosines([3.001], [0.5]))],
        )
        with pytest.raises(PlantConfigError, match="overlap"):
            simulate(cfg)


class TestScenarios:
    @pytest.mark.parametrize("name", sorted(SCENARIOS))
    def test_valid(self, name):
        cfg = scenario(name, 1)
        cfg.validate()
        assert cfg.name == name

    def test_unknown(self):
        with pytest.raises(KeyError):
            scenario("nope")

    def test_pitch_models(self):
        from freqsep.plantsim import pitch_channel_model, thrust_channel_model

        p, t = pitch_channel_model(), thrust_channel_model()
        assert (p.order_n, p.astatism) == (9, 1)
        assert p.response([1e-4])[0] * 1j * 1e-4 == pytest.approx(0.8, rel=1e-3)
        assert t.order_n == 5 and t.response([0.0])[0] == pytest.approx(2.0)


class TestSerialisation:
    def test_plant_json_round_trip(self, tmp_path):
        cfg = scenario("correlated-3x2", 2)
        path = tmp_path / "plant.json"
        path.write_text(json.dumps(plant_config_to_obj(cfg)))
        back = load_plant_config(path)
        a, b = simulate(cfg), simulate(back)
        for ra, rb in zip(a.inputs + a.outputs, b.inputs + b.outputs):
            assert np.allclose(ra.samples, rb.samples, atol=1e-12)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "plant.json"
        path.write_text(json.dumps({"inputs": []}))
        with pytest.raises(PlantConfigError, match="missing"):
            load_plant_config(path)

    def test_realization_csv(self, tmp_path):
        real = simulate(scenario("independent-2x1", 1))
        p = tmp_path / "r.csv"
        write_realization_csv(p, real)
        raw = p.read_bytes()
        assert b"\r" not in raw
        lines = raw.decode("utf-8").splitlines()
        assert lines[0] == "t,x1,x2,y1" and len(lines) == real.inputs[0].count + 1
        first = [float(v) for v in lines[1].split(",")]
        assert first[1] == real.inputs[0].samples[0]

    def test_truth_json(self):
        doc = simulate(scenario("correlated-3x2", 1)).truth_json_obj()
        assert list(doc)[0] == "format_version"
        assert len(doc["coupling"]) == 2 and doc["coupling"][0]["inputs"] == ["x1", "x2"]
