import json
from collections import Counter

import numpy as np
import pytest

import synthdata
from polymix import synth
from polymix.corpus import (
    CANONICAL_SAMPLE_RATE,
    CLASS_ORDER,
    ClipRecord,
    CorpusIndex,
    Dastgah,
    InstrumentClass,
    bpm_bin,
)
from polymix.errors import (
    InfeasibleCombinationError,
    PolymixError,
    RetrySignal,
)


# ---------------------------------------------------------------------------
# seeding

def _splitmix_reference(seed, index):
    """Straight-line 64-bit mix, written out step by step."""
    mask = 0xFFFFFFFFFFFFFFFF
    z = (seed + (index + 1) * 0x9E3779B97F4A7C15) & mask
    z = (z ^ (z >> 30)) & mask
    z = (z * 0xBF58476D1CE4E5B9) & mask
    z = (z ^ (z >> 27)) & mask
    z = (z * 0x94D049BB133111EB) & mask
    z = (z ^ (z >> 31)) & mask
    return z


def test_child_seed_matches_reference_mix():
    for seed in (0, 1, 42, 2 ** 63, 2 ** 64 - 1):
        for index in (0, 1, 7, 999, 10 ** 6):
            assert synth.child_seed(seed, index) == _splitmix_reference(seed, index)


def test_child_seed_streams_do_not_collide():
    seeds = {synth.child_seed(0, i) for i in range(10000)}
    assert len(seeds) == 10000
    assert synth.child_seed(0, 0) != synth.child_seed(1, 0)


def test_prior_for_index_contiguous_blocks():
    total = 25
    priors = [synth.prior_for_index(i, total) for i in range(total)]
    want = [p for p in synth.ALL_PRIORS for _ in range(5)]
    assert priors == want


# ---------------------------------------------------------------------------
# ensemble priors

def _draw_many(prior, n=600, seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    return [synth.sample_ensemble(prior, rng) for _ in range(n)]


def _split(combo):
    melodic = [i for i in combo if not i.is_percussive]
    perc = [i for i in combo if i.is_percussive]
    return melodic, perc


def test_ensembles_have_no_repeats_and_stable_order():
    for prior in synth.ALL_PRIORS:
        for combo in _draw_many(prior, n=200, seed=3):
            assert len(set(combo)) == len(combo)
            assert list(combo) == sorted(combo, key=lambda i: i.value)


def test_small_prior_composition():
    for combo in _draw_many(synth.EnsemblePrior.SMALL):
        melodic, perc = _split(combo)
        assert len(melodic) == 2
        assert len(perc) in (0, 1)


def test_medium_prior_composition():
    sizes = set()
    for combo in _draw_many(synth.EnsemblePrior.MEDIUM):
        melodic, perc = _split(combo)
        assert len(melodic) in (3, 4)
        assert len(perc) in (0, 1)
        sizes.add(len(melodic))
    assert sizes == {3, 4}


def test_orchestral_prior_composition():
    for combo in _draw_many(synth.EnsemblePrior.ORCHESTRAL):
        melodic, perc = _split(combo)
        assert len(melodic) in (5, 6, 7)
        assert len(perc) in (1, 2)


def test_vocal_prior_always_includes_voice():
    for combo in _draw_many(synth.EnsemblePrior.VOCAL):
        melodic, perc = _split(combo)
        assert InstrumentClass.AVAZ in combo
        assert len(melodic) in (3, 4, 5)
        assert len(perc) in (0, 1)


def test_random_combo_size_distribution_is_flat():
    combos = _draw_many(synth.EnsemblePrior.RANDOM_COMBO, n=1000, seed=17)
    counts = Counter(len(c) for c in combos)
    assert set(counts) == {2, 3, 4, 5, 6}
    # chi-squared against uniform over 5 sizes; 27.9 is far beyond any
    # plausible sampling fluctuation for a correct generator (p < 1e-5)
    chi2 = sum((counts[s] - 200.0) ** 2 / 200.0 for s in counts)
    assert chi2 < 27.9, dict(counts)


# ---------------------------------------------------------------------------
# constrained clip selection

def _record(cid, inst, dastgah, bpm):
    return ClipRecord(cid, inst, dastgah, bpm, f"{cid}.wav", 5.0)


def _selection_index():
    ney, tar = InstrumentClass.NEY, InstrumentClass.TAR
    records = [
        # shur covers both instruments; nava covers only ney
        _record("n-shur-90", ney, Dastgah.SHUR, 90.0),
        _record("n-shur-120", ney, Dastgah.SHUR, 120.0),
        _record("n-nava-90", ney, Dastgah.NAVA, 90.0),
        _record("t-shur-90", tar, Dastgah.SHUR, 91.0),
        _record("t-shur-150", tar, Dastgah.SHUR, 150.0),
        _record("d-90", InstrumentClass.DAAF, None, 94.0),
        _record("d-150", InstrumentClass.DAAF, None, 150.0),
    ]
    return CorpusIndex(records, bpm_bin_width=8.0)


def test_select_clips_random_strategy_unconstrained():
    index = _selection_index()
    rng = np.random.Generator(np.random.PCG64(0))
    combo = (InstrumentClass.NEY, InstrumentClass.TAR)
    sel = synth.select_clips(index, combo, synth.Strategy.RANDOM, rng)
    assert sel.dastgah is None
    assert sel.baseline_bpm is None
    assert [r.instrument for r in sel.clips] == list(combo)


def test_select_clips_dastgah_strategy_picks_covering_dastgah():
    index = _selection_index()
    combo = (InstrumentClass.NEY, InstrumentClass.TAR, InstrumentClass.DAAF)
    for trial in range(20):
        rng = np.random.Generator(np.random.PCG64(trial))
        sel = synth.select_clips(index, combo, synth.Strategy.DASTGAH_ONLY, rng)
        assert sel.dastgah is Dastgah.SHUR  # the only dastgah covering both
        for rec in sel.clips:
            if not rec.instrument.is_percussive:
                assert rec.dastgah is Dastgah.SHUR
        assert sel.clips[-1].instrument is InstrumentClass.DAAF  # unconstrained
        assert sel.baseline_bpm is None


def test_select_clips_bpm_strategy_single_bucket_and_median_baseline():
    index = _selection_index()
    combo = (InstrumentClass.NEY, InstrumentClass.TAR, InstrumentClass.DAAF)
    for trial in range(20):
        rng = np.random.Generator(np.random.PCG64(trial))
        sel = synth.select_clips(index, combo, synth.Strategy.BPM_ONLY, rng)
        bins = {bpm_bin(r.bpm, 8.0) for r in sel.clips}
        assert bins == {11}  # only bucket covering all three instruments
        assert sel.baseline_bpm == float(np.median([r.bpm for r in sel.clips]))
        assert sel.dastgah is None


def test_select_clips_combined_strategy():
    index = _selection_index()
    combo = (InstrumentClass.NEY, InstrumentClass.TAR)
    rng = np.random.Generator(np.random.PCG64(1))
    sel = synth.select_clips(index, combo, synth.Strategy.DASTGAH_BPM, rng)
    assert sel.dastgah is Dastgah.SHUR
    assert {bpm_bin(r.bpm, 8.0) for r in sel.clips} == {11}
    assert sel.baseline_bpm is not None


def test_select_clips_retry_signals():
    index = _selection_index()
    rng = np.random.Generator(np.random.PCG64(0))
    # no single dastgah covers ney together with santur (absent entirely)
    with pytest.raises(RetrySignal, match="no dastgah"):
        synth.select_clips(index, (InstrumentClass.NEY, InstrumentClass.SANTUR),
                           synth.Strategy.DASTGAH_ONLY, rng)
    # ney has bins {11, 15}, tar {11, 18}: only 11 shared; adding a fake
    # instrument with no clips kills every bucket
    with pytest.raises(RetrySignal, match="no shared tempo bucket"):
        synth.select_clips(index, (InstrumentClass.NEY, InstrumentClass.PIANO),
                           synth.Strategy.BPM_ONLY, rng)
    with pytest.raises(RetrySignal, match="no clip for"):
        synth.select_clips(index, (InstrumentClass.NEY, InstrumentClass.PIANO),
                           synth.Strategy.RANDOM, rng)
    with pytest.raises(PolymixError, match="empty corpus"):
        synth.select_clips(CorpusIndex([]), (InstrumentClass.NEY,),
                           synth.Strategy.RANDOM, rng)


# ---------------------------------------------------------------------------
# mixing

def _clip(samples):
    from polymix.corpus import AudioClip
    return AudioClip(np.asarray(samples, dtype=np.float64), CANONICAL_SAMPLE_RATE)


def test_mix_matches_documented_formula():
    rng = np.random.Generator(np.random.PCG64(8))
    twin = np.random.Generator(np.random.PCG64(8))
    a = _clip([0.5, -1.0, 0.25, 0.0])
    b = _clip([0.1, 0.2, -0.4, 0.3])
    out = synth.mix([a, b], rng, gain_low=0.6, gain_high=1.0, peak=0.9)

    gains = twin.uniform(0.6, 1.0, size=2)
    total = np.zeros(4)
    for clip, g in zip((a, b), gains):
        total += clip.samples * (0.9 / np.max(np.abs(clip.samples))) * g
    expected = total * (0.9 / np.max(np.abs(total)))
    np.testing.assert_allclose(out.samples, expected, rtol=0, atol=1e-15)
    assert out.sample_rate == CANONICAL_SAMPLE_RATE


def test_mix_peak_is_exact_and_inputs_validated():
    rng = np.random.Generator(np.random.PCG64(0))
    clips = [_clip(np.random.default_rng(i).standard_normal(1000))
             for i in range(3)]
    out = synth.mix(clips, rng)
    assert abs(np.max(np.abs(out.samples)) - synth.MIX_PEAK) < 1e-12

    with pytest.raises(PolymixError, match="at least 2"):
        synth.mix(clips[:1], rng)
    with pytest.raises(PolymixError, match="equal-length"):
        synth.mix([clips[0], _clip(np.zeros(10))], rng)
    from polymix.corpus import AudioClip
    other_rate = AudioClip(np.zeros(1000), 8000)
    with pytest.raises(PolymixError, match="one sample rate"):
        synth.mix([clips[0], other_rate], rng)


# ---------------------------------------------------------------------------
# full sample construction

def test_synth_config_validation(tmp_path):
    with pytest.raises(PolymixError, match="multiple of 5"):
        synth.SynthConfig(total_samples=7, strategy=synth.Strategy.RANDOM,
                          output_dir=tmp_path)
    with pytest.raises(PolymixError, match="multiple of 5"):
        synth.SynthConfig(total_samples=0, strategy=synth.Strategy.RANDOM,
                          output_dir=tmp_path)
    with pytest.raises(PolymixError, match="gain"):
        synth.SynthConfig(total_samples=5, strategy=synth.Strategy.RANDOM,
                          output_dir=tmp_path, gain_low=0.0)


def test_build_sample_is_deterministic_and_sound(corpus, tmp_path):
    cfg = synth.SynthConfig(total_samples=10, strategy=synth.Strategy.RANDOM,
                            output_dir=tmp_path, master_seed=77)
    s1 = synth.build_sample(corpus.index, cfg, 3)
    s2 = synth.build_sample(corpus.index, cfg, 3)
    np.testing.assert_array_equal(s1.audio.samples, s2.audio.samples)
    assert s1.manifest_line("audio/x.wav") == s2.manifest_line("audio/x.wav")

    assert s1.id == "mix-000003"
    assert s1.seed == synth.child_seed(77, 3)
    want_labels = {corpus.index.get(cid).instrument for cid in s1.source_ids}
    got_labels = {c for c, on in zip(CLASS_ORDER, s1.labels) if on}
    assert got_labels == want_labels
    assert len(s1.audio) == round(5.0 * CANONICAL_SAMPLE_RATE)


def test_manifest_line_key_order(corpus, tmp_path):
    cfg = synth.SynthConfig(total_samples=5, strategy=synth.Strategy.DASTGAH_BPM,
                            output_dir=tmp_path, master_seed=1)
    sample = synth.build_sample(corpus.index, cfg, 0)
    obj = json.loads(sample.manifest_line("audio/mix-000000.wav"),
                     object_pairs_hook=list)
    assert [k for k, _ in obj] == ["id", "path", "labels", "strategy", "prior",
                                   "dastgah", "baseline_bpm", "source_ids",
                                   "seed"]


def test_build_sample_infeasible_corpus_raises():
    records = [_record(f"n{i}", InstrumentClass.NEY, Dastgah.SHUR, 90.0 + i)
               for i in range(4)]
    index = CorpusIndex(records)
    cfg = synth.SynthConfig(total_samples=5, strategy=synth.Strategy.RANDOM,
                            output_dir="unused")
    with pytest.raises(InfeasibleCombinationError,
                       match="no satisfiable combination"):
        synth.build_sample(index, cfg, 0)


def test_synthesize_dataset_output_and_validation(corpus, tmp_path):
    cfg = synth.SynthConfig(total_samples=10, strategy=synth.Strategy.DASTGAH_ONLY,
                            output_dir=tmp_path / "out", master_seed=5)
    manifest = synth.synthesize_dataset(corpus.index, cfg)
    lines = manifest.read_text().splitlines()
    assert len(lines) == 10
    for i, line in enumerate(lines):
        obj = json.loads(line)
        assert obj["id"] == f"mix-{i:06d}"
        assert (tmp_path / "out" / obj["path"]).exists()
        assert obj["strategy"] == "dastgah"
    assert synth.validate_output(manifest, corpus.index) == []


def test_synthesize_dataset_threads_do_not_change_output(corpus, tmp_path):
    outs = []
    for name, threads in (("serial", 1), ("pool", 3)):
        cfg = synth.SynthConfig(total_samples=10, strategy=synth.Strategy.BPM_ONLY,
                                output_dir=tmp_path / name, master_seed=9,
                                threads=threads)
        synth.synthesize_dataset(corpus.index, cfg)
        outs.append(synthdata.tree_hash(tmp_path / name))
    assert outs[0] == outs[1]


def test_synthesize_dataset_seed_changes_output(corpus, tmp_path):
    hashes = []
    for name, seed in (("a", 1), ("b", 1), ("c", 2)):
        cfg = synth.SynthConfig(total_samples=5, strategy=synth.Strategy.RANDOM,
                                output_dir=tmp_path / name, master_seed=seed)
        synth.synthesize_dataset(corpus.index, cfg)
        hashes.append(synthdata.tree_hash(tmp_path / name))
    assert hashes[0] == hashes[1]
    assert hashes[0] != hashes[2]


def test_synthesize_dataset_metadata_only_mode(corpus, tmp_path):
    cfg = synth.SynthConfig(total_samples=5, strategy=synth.Strategy.RANDOM,
                            output_dir=tmp_path / "meta", master_seed=2,
                            write_audio=False)
    manifest = synth.synthesize_dataset(corpus.index, cfg)
    assert len(manifest.read_text().splitlines()) == 5
    assert not any((tmp_path / "meta" / "audio").glob("*.wav"))
    assert synth.validate_output(manifest, corpus.index, check_audio=False) == []


# ---------------------------------------------------------------------------
# validator catches planted violations

@pytest.fixture(scope="module")
def dbpm_output(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("dbpm")
    cfg = synth.SynthConfig(total_samples=10, strategy=synth.Strategy.DASTGAH_BPM,
                            output_dir=out, master_seed=13)
    manifest = synth.synthesize_dataset(corpus.index, cfg)
    return manifest


def _mutate_line(manifest, line_no, edit):
    lines = [json.loads(x) for x in manifest.read_text().splitlines()]
    edit(lines[line_no])
    return "\n".join(json.dumps(x) for x in lines) + "\n"


def _kinds(manifest_text, manifest, index):
    doctored = manifest.parent / "doctored.jsonl"
    doctored.write_text(manifest_text)
    violations = synth.validate_output(doctored, index)
    return {v.kind for v in violations}


def test_validate_catches_label_tampering(corpus, dbpm_output):
    text = _mutate_line(dbpm_output, 0, lambda o: o["labels"].pop())
    assert "label-soundness" in _kinds(text, dbpm_output, corpus.index)


def test_validate_catches_dastgah_mismatch(corpus, dbpm_output):
    def swap(o):
        o["dastgah"] = "nava" if o["dastgah"] != "nava" else "shur"
    text = _mutate_line(dbpm_output, 1, swap)
    assert "dastgah-consistency" in _kinds(text, dbpm_output, corpus.index)


def test_validate_catches_cross_bucket_sources(corpus, dbpm_output):
    # swap one source for the same instrument in a different tempo bucket
    def cross(o):
        rec = corpus.index.get(o["source_ids"][0])
        other_bin = 11 if bpm_bin(rec.bpm, 8.0) != 11 else 12
        pool = corpus.index.clips(rec.instrument, dastgah=rec.dastgah,
                                  bin_index=other_bin)
        o["source_ids"][0] = pool[0].id
    text = _mutate_line(dbpm_output, 2, cross)
    kinds = _kinds(text, dbpm_output, corpus.index)
    assert "bpm-bin" in kinds


def test_validate_catches_unknown_source(corpus, dbpm_output):
    text = _mutate_line(dbpm_output, 3,
                        lambda o: o["source_ids"].append("ghost-clip"))
    assert "manifest" in _kinds(text, dbpm_output, corpus.index)


def test_validate_catches_clipped_audio(corpus, dbpm_output, tmp_path):
    from polymix import audio_io
    from polymix.corpus import AudioClip
    obj = json.loads(dbpm_output.read_text().splitlines()[4])
    wav = dbpm_output.parent / obj["path"]
    original = wav.read_bytes()
    try:
        loud = AudioClip(np.full(round(5.0 * CANONICAL_SAMPLE_RATE), 0.99),
                         CANONICAL_SAMPLE_RATE)
        audio_io.write_wav(wav, loud)
        violations = synth.validate_output(dbpm_output, corpus.index)
        assert any(v.kind == "clipping" and v.sample_id == obj["id"]
                   for v in violations)
    finally:
        wav.write_bytes(original)


def test_validate_catches_single_instrument_sample(corpus, dbpm_output):
    def collapse(o):
        keep = o["source_ids"][0]
        rec = corpus.index.get(keep)
        o["source_ids"] = [keep]
        o["labels"] = [rec.instrument.value]
    text = _mutate_line(dbpm_output, 5, collapse)
    kinds = _kinds(text, dbpm_output, corpus.index)
    assert "label-soundness" in kinds
