import io
import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artzsl.corpus import (
    Artwork,
    Dataset,
    balance,
    build_class_descriptions,
    class_histogram,
    load_manifest,
    write_manifest,
    zsl_split,
)
from artzsl.errors import DataError
from artzsl.synthetic import make_imbalanced_corpus
from artzsl.text import load_embeddings

FEATURE_DIM = 4


def art(art_id, materials, description="oak tree on a hill", dim=FEATURE_DIM):
    return Artwork(
        id=art_id,
        features=np.full(dim, 0.5),
        description=description,
        materials=frozenset(materials),
    )


def manifest_stream(rows):
    return io.StringIO("".join(json.dumps(r) + "\n" for r in rows))


def valid_row(art_id="a1", n_features=FEATURE_DIM, materials=("oak",)):
    return {
        "id": art_id,
        "features": [0.1] * n_features,
        "description": "an oak tree",
        "materials": list(materials),
    }


class TestLoadManifest:
    def test_three_valid_rows(self):
        rows = [valid_row(f"a{i}") for i in range(3)]
        ds = load_manifest(manifest_stream(rows), feature_dim=FEATURE_DIM)
        assert len(ds) == 3
        assert ds.classes == {"oak"}

    def test_wrong_feature_count_names_row(self):
        rows = [valid_row("a1"), valid_row("a2", n_features=3)]
        with pytest.raises(DataError, match="row 2"):
            load_manifest(manifest_stream(rows), feature_dim=FEATURE_DIM)

    def test_empty_file_is_valid(self):
        ds = load_manifest(manifest_stream([]), feature_dim=FEATURE_DIM)
        assert len(ds) == 0
        assert ds.classes == frozenset()

    def test_missing_field_names_row(self):
        row = valid_row()
        del row["description"]
        with pytest.raises(DataError, match="row 1.*description"):
            load_manifest(manifest_stream([row]), feature_dim=FEATURE_DIM)

    def test_empty_materials_rejected(self):
        row = valid_row()
        row["materials"] = []
        with pytest.raises(DataError, match="row 1"):
            load_manifest(manifest_stream([row]), feature_dim=FEATURE_DIM)

    def test_duplicate_id_rejected(self):
        rows = [valid_row("same"), valid_row("same")]
        with pytest.raises(DataError, match="duplicate"):
            load_manifest(manifest_stream(rows), feature_dim=FEATURE_DIM)

    def test_non_finite_feature_rejected(self):
        row = valid_row()
        row["features"][0] = float("nan")
        with pytest.raises(DataError, match="row 1"):
            load_manifest(manifest_stream([row]), feature_dim=FEATURE_DIM)

    def test_features_path_binary(self, tmp_path):
        vec = np.arange(FEATURE_DIM, dtype="<f4")
        (tmp_path / "feat.bin").write_bytes(vec.tobytes())
        row = {
            "id": "a1",
            "features_path": "feat.bin",
            "description": "x",
            "materials": ["oak"],
        }
        manifest = tmp_path / "m.jsonl"
        manifest.write_text(json.dumps(row) + "\n", encoding="utf-8")
        ds = load_manifest(manifest, feature_dim=FEATURE_DIM)
        assert np.array_equal(ds.artworks[0].features, vec.astype(np.float64))

    def test_write_read_roundtrip(self, tmp_path):
        rows = [valid_row(f"a{i}", materials=("oak", "silver")) for i in range(4)]
        ds = load_manifest(manifest_stream(rows), feature_dim=FEATURE_DIM)
        path = tmp_path / "out.jsonl"
        write_manifest(ds, path)
        again = load_manifest(path, feature_dim=FEATURE_DIM)
        assert [a.id for a in again.artworks] == [a.id for a in ds.artworks]
        assert all(
            np.array_equal(a.features, b.features)
            for a, b in zip(again.artworks, ds.artworks)
        )


class TestClassHistogram:
    def test_multi_label_counts_each_material(self):
        ds = Dataset([art("a1", {"oak", "silver"})])
        assert class_histogram(ds) == {"oak": 1, "silver": 1}

    def test_shared_material_counts_twice(self):
        ds = Dataset([art("a1", {"oak"}), art("a2", {"oak", "maple"})])
        assert class_histogram(ds) == {"oak": 2, "maple": 1}

    def test_single_mode_counts_each_artwork_once(self):
        ds = Dataset([art("a1", {"oak", "silver"}), art("a2", {"silver"})])
        hist = class_histogram(ds, mode="single")
        assert hist == {"oak": 1, "silver": 1}
        assert sum(hist.values()) == len(ds)

    def test_dominant_class_share(self):
        # mirrors the shape of the real corpus: one class holding ~87%
        ds = Dataset(
            [art(f"p{i}", {"paper"}) for i in range(87)]
            + [art(f"c{i}", {"canvas"}) for i in range(13)]
        )
        hist = class_histogram(ds)
        assert hist["paper"] / len(ds) == pytest.approx(0.87)


class TestBalance:
    def test_big_class_capped_exactly(self):
        # one giant class next to a tiny one, sized like the real corpus
        ds = Dataset(
            [art(f"p{i}", {"paper"}, dim=2) for i in range(38_642)]
            + [art(f"c{i}", {"canvas"}, dim=2) for i in range(40)]
        )
        out = balance(ds, cap=147, seed=11)
        hist = class_histogram(out)
        assert hist["paper"] == 147
        assert hist["canvas"] == 40

    def test_singleton_classes_survive(self):
        ds = Dataset([art("a1", {"fruitwood"}), art("a2", {"nautilus shell"})])
        out = balance(ds, cap=147, seed=0)
        assert class_histogram(out) == {"fruitwood": 1, "nautilus shell": 1}

    def test_small_class_kept_whole(self):
        ds = Dataset([art(f"a{i}", {"oak"}) for i in range(10)])
        assert len(balance(ds, cap=147, seed=0)) == 10

    def test_deterministic_under_seed(self):
        data = make_imbalanced_corpus(n_artworks=500, n_classes=12, seed=3)
        ds = data.dataset()
        first = balance(ds, cap=20, seed=99)
        second = balance(ds, cap=20, seed=99)
        assert [a.id for a in first.artworks] == [a.id for a in second.artworks]

    def test_idempotent_per_class_counts(self):
        data = make_imbalanced_corpus(
            n_artworks=800, n_classes=15, overlap_size_limit=25, seed=5
        )
        once = balance(data.dataset(), cap=25, seed=1)
        twice = balance(once, cap=25, seed=2)
        assert class_histogram(twice) == class_histogram(once)

    def test_overlapping_labels_can_exceed_cap(self):
        # rare classes are protected first, so heavy label overlap into a
        # frequent class may push it past the cap; this is the documented
        # trade-off, not an accident
        ds = Dataset(
            [art(f"r{i}", {f"rare{i:02d}", "paper"}) for i in range(6)]
            + [art(f"p{i}", {"paper"}) for i in range(10)]
        )
        out = balance(ds, cap=4, seed=0)
        hist = class_histogram(out)
        assert hist["paper"] >= 6
        assert all(hist[f"rare{i:02d}"] == 1 for i in range(6))

    def test_output_is_subset_in_input_order(self):
        data = make_imbalanced_corpus(n_artworks=400, n_classes=10, seed=8)
        ds = data.dataset()
        out = balance(ds, cap=15, seed=4)
        positions = {a.id: i for i, a in enumerate(ds.artworks)}
        ids = [a.id for a in out.artworks]
        assert ids == sorted(ids, key=positions.__getitem__)
        assert len(set(ids)) == len(ids)

    def test_multilabel_artwork_appears_once(self):
        ds = Dataset([art("both", {"oak", "silver"}), art("o1", {"oak"})])
        out = balance(ds, cap=5, seed=0)
        assert sorted(a.id for a in out.artworks) == ["both", "o1"]

    def test_cap_validation(self):
        with pytest.raises(ValueError):
            balance(Dataset([]), cap=0, seed=0)

    def test_empty_dataset(self):
        assert len(balance(Dataset([]), cap=147, seed=0)) == 0

    @settings(max_examples=20, deadline=None)
    @given(cap=st.integers(1, 30), seed=st.integers(0, 2**32))
    def test_counts_equal_min_cap_available(self, cap, seed):
        data = make_imbalanced_corpus(
            n_artworks=300, n_classes=8, overlap_size_limit=cap, seed=7
        )
        ds = data.dataset()
        before = class_histogram(ds)
        after = class_histogram(balance(ds, cap=cap, seed=seed))
        for material, available in before.items():
            assert after.get(material, 0) == min(cap, available)


def pool_table(words, dim=6):
    rng = np.random.default_rng(0)
    lines = [
        w + " " + " ".join(repr(float(v)) for v in rng.normal(size=dim)) + "\n"
        for w in words
    ]
    return load_embeddings(iter(lines), dim=dim)


class TestBuildClassDescriptions:
    def test_top_k_by_brute_force(self):
        # 30 distinct words with distinct frequencies; oracle ranks by count
        words = [f"w{i:02d}" for i in range(30)]
        description = " ".join(w for i, w in enumerate(words) for _ in range(i + 1))
        ds = Dataset([art("a1", {"oak"}, description=description)])
        table = pool_table(words)
        descs, unusable = build_class_descriptions(ds, table, frozenset(), k=25)
        assert not unusable
        counts = Counter(description.split())
        expected = [w for w, _ in sorted(counts.items(), key=lambda wc: (-wc[1], wc[0]))[:25]]
        assert descs[0].words == expected

    def test_fewer_than_k_words(self):
        ds = Dataset([art("a1", {"oak"}, description="ash beech cedar ash")])
        table = pool_table(["ash", "beech", "cedar"])
        descs, _ = build_class_descriptions(ds, table, frozenset(), k=25)
        assert sorted(descs[0].words) == ["ash", "beech", "cedar"]
        assert descs[0].embedded.length == 3

    def test_tie_broken_lexicographically(self):
        ds = Dataset([art("a1", {"oak"}, description="zebra apple zebra apple")])
        table = pool_table(["zebra", "apple"])
        descs, _ = build_class_descriptions(ds, table, frozenset(), k=1)
        assert descs[0].words == ["apple"]

    def test_stopwords_removed_before_pooling(self):
        ds = Dataset([art("a1", {"oak"}, description="the the the tree")])
        table = pool_table(["the", "tree"])
        descs, _ = build_class_descriptions(ds, table, frozenset({"the"}), k=5)
        assert descs[0].words == ["tree"]

    def test_unusable_class_reported(self):
        ds = Dataset([art("a1", {"oak"}, description="uncharted words only")])
        table = pool_table(["known"])
        descs, unusable = build_class_descriptions(ds, table, frozenset(), k=5)
        assert descs == []
        assert unusable == ["oak"]

    def test_precomputed_tokens_used(self):
        a = art("a1", {"oak"}, description="ignored entirely")
        a.tokens = ["cedar", "cedar", "ash"]
        table = pool_table(["cedar", "ash"])
        descs, _ = build_class_descriptions(Dataset([a]), table, frozenset(), k=5)
        assert descs[0].words == ["cedar", "ash"]

    def test_words_subset_of_pooled_vocabulary(self):
        data = make_imbalanced_corpus(n_artworks=60, n_classes=5, seed=2)
        ds = data.dataset()
        vocab = {w for a in ds.artworks for w in a.description.split()}
        table = pool_table(sorted(vocab))
        descs, _ = build_class_descriptions(ds, table, frozenset(), k=3)
        for d in descs:
            pooled = {
                w
                for a in ds.artworks
                if d.material in a.materials
                for w in a.description.split()
            }
            assert set(d.words) <= pooled


class TestZslSplit:
    def make_many_classes(self, n):
        return Dataset([art(f"a{i}", {f"mat{i:03d}"}) for i in range(n)])

    def test_147_classes_fraction_030(self):
        split = zsl_split(self.make_many_classes(147), fraction=0.3, seed=0)
        assert len(split.heldout_classes) == 44

    def test_20_classes_fraction_030(self):
        split = zsl_split(self.make_many_classes(20), fraction=0.3, seed=0)
        assert len(split.heldout_classes) == 6

    def test_10_classes_fraction_030(self):
        # floor(3.0) despite 0.3*10 being 2.999... in floats
        split = zsl_split(self.make_many_classes(10), fraction=0.3, seed=0)
        assert len(split.heldout_classes) == 3

    def test_fraction_zero(self):
        split = zsl_split(self.make_many_classes(5), fraction=0.0, seed=0)
        assert split.heldout_classes == frozenset()
        assert len(split.val) == 0
        assert len(split.train) == 5

    def test_fraction_validation(self):
        with pytest.raises(ValueError):
            zsl_split(self.make_many_classes(3), fraction=1.5, seed=0)

    def test_no_heldout_material_in_train(self):
        data = make_imbalanced_corpus(n_artworks=300, n_classes=12, seed=9)
        split = zsl_split(data.dataset(), fraction=0.3, seed=5)
        for a in split.train.artworks:
            assert not a.materials & split.heldout_classes
        for a in split.val.artworks:
            assert a.materials & split.heldout_classes

    def test_partition_is_disjoint_and_complete(self):
        data = make_imbalanced_corpus(n_artworks=200, n_classes=9, seed=4)
        ds = data.dataset()
        split = zsl_split(ds, fraction=0.4, seed=1)
        train_ids = {a.id for a in split.train.artworks}
        val_ids = {a.id for a in split.val.artworks}
        assert not train_ids & val_ids
        assert train_ids | val_ids == {a.id for a in ds.artworks}

    def test_deterministic(self):
        ds = self.make_many_classes(30)
        first = zsl_split(ds, fraction=0.3, seed=77)
        second = zsl_split(ds, fraction=0.3, seed=77)
        assert first.heldout_classes == second.heldout_classes
