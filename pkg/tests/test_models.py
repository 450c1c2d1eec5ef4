import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import tiny_arch, tiny_model
from src.fieldamort.errors import CheckpointIOError, ShapeError, UnsupportedKindError
from src.fieldamort.models import (
    FeatureScaler,
    ModeSchedule,
    ModelKind,
    OracleReplay,
    aggregate,
    build_model,
    embed,
    field,
    fourier_basis,
    fourier_basis_1d,
    infer_collection,
    load_model,
    potential,
    save_model,
    source_features,
)
from src.fieldamort.data import random_collection
from src.fieldamort.numerics import finite_difference_gradient, make_rng
from src.fieldamort.oracle import Box, Source, SourceCollection, label_points
from src.fieldamort.utils.counters import OpCounter

ALL_KINDS = [k.value for k in ModelKind]
ADDITIVE_KINDS = ["fourier", "fcilr", "linear"]


def random_agg(model, rng):
    return rng.normal(scale=0.5, size=model.embedding_size)


class TestFourierBasis:
    def test_origin(self):
        basis, _ = fourier_basis((0.0, 0.0), ModeSchedule(n_max=3))
        np.testing.assert_array_equal(basis[:9], np.ones(9))
        np.testing.assert_array_equal(basis[9:], np.zeros(27))

    def test_single_mode(self):
        basis, grad = fourier_basis((1.3, -0.7), ModeSchedule(n_max=1))
        np.testing.assert_array_equal(basis, [1.0, 0.0, 0.0, 0.0])
        assert not np.any(grad)

    def test_block_order(self):
        sched = ModeSchedule(n_max=2, lambda_min=8.0)
        x, y = 0.3, -1.1
        basis, _ = fourier_basis((x, y), sched)
        w = 2 * np.pi / 8.0
        # n = 1 (x), m = 0 (y) sits at row-major index 2 of each block
        assert basis[2] == pytest.approx(np.cos(w * x))
        assert basis[4 + 2] == pytest.approx(np.sin(w * x))
        assert basis[8 + 1] == pytest.approx(np.sin(w * y))
        assert basis[12 + 3] == pytest.approx(np.sin(w * x) * np.sin(w * y))

    def test_gradient_matches_finite_differences(self, rng):
        sched = ModeSchedule(n_max=3)
        for r in rng.uniform(-3, 3, size=(5, 2)):
            _, grad = fourier_basis(r, sched)
            for k in range(36):
                fd = finite_difference_gradient(lambda x: fourier_basis(x, sched)[0][k], r)
                np.testing.assert_allclose(grad[:, k], fd, rtol=1e-7, atol=1e-9)

    def test_orthogonal_on_periodic_grid(self):
        sched = ModeSchedule(n_max=4, lambda_min=24.0)
        k = 16
        axis = np.arange(k) * sched.lambda_min / k
        xx, yy = np.meshgrid(axis, axis)
        basis, _ = fourier_basis(np.stack([xx.ravel(), yy.ravel()], axis=1), sched)
        gram = basis.T @ basis
        off = gram - np.diag(np.diag(gram))
        assert np.abs(off).sum() <= 1e-8 * np.abs(np.diag(gram)).sum()

    def test_one_dimensional(self):
        sched = ModeSchedule(n_max=4)
        basis, deriv = fourier_basis_1d(np.array([0.0, 1.0]), sched)
        assert basis.shape == (2, 8)
        np.testing.assert_array_equal(basis[0], [1, 1, 1, 1, 0, 0, 0, 0])
        np.testing.assert_allclose(deriv[1, 4:], sched.omegas() * np.cos(sched.omegas()), rtol=1e-14)

    def test_log_schedule(self):
        om = ModeSchedule(n_max=5, kind="log_spaced", omega_lo=0.5, omega_hi=8.0).omegas()
        assert om[0] == 0.0
        assert np.all(np.diff(om) > 0)
        assert om[-1] == pytest.approx(8.0)

    def test_integer_schedule(self):
        np.testing.assert_allclose(ModeSchedule(n_max=3, lambda_min=24.0).omegas(), 2 * np.pi * np.arange(3) / 24.0)

    def test_invalid_schedule(self):
        with pytest.raises(ShapeError):
            ModeSchedule(kind="cubic")


class TestPotentialAndField:
    def test_zero_embedding(self):
        model = tiny_model("fourier")
        agg = np.zeros(model.embedding_size)
        for r in [(0, 0), (1.5, -2.0)]:
            assert potential(model, agg, r) == 0.0

    def test_constant_mode(self):
        model = tiny_model("fourier")
        agg = np.zeros(model.embedding_size)
        agg[0] = 3.0
        for r in [(0, 0), (1.5, -2.0), (-2.9, 2.9)]:
            assert potential(model, agg, r) == pytest.approx(3.0, rel=1e-15)
            np.testing.assert_array_equal(field(model, agg, r), [0.0, 0.0])

    def test_output_scale(self):
        model = tiny_model("fourier", output_scale=0.01)
        agg = np.zeros(model.embedding_size)
        agg[0] = 3.0
        assert potential(model, agg, (0.4, 0.4)) == pytest.approx(0.03)

    def test_fast_path_matches_explicit_basis(self, rng):
        model = tiny_model("fourier", n_max=3)
        agg = random_agg(model, rng)
        for r in rng.uniform(-3, 3, size=(10, 2)):
            basis, grad = fourier_basis(r, model.schedule)
            assert potential(model, agg, r) == pytest.approx(basis @ agg, rel=1e-12, abs=1e-14)
            np.testing.assert_allclose(field(model, agg, r), -grad @ agg, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_field_is_negative_potential_gradient(self, kind, rng):
        model = tiny_model(kind)
        agg = random_agg(model, rng)
        for r in rng.uniform(-3, 3, size=(5, 2)):
            fd = -finite_difference_gradient(lambda x: potential(model, agg, x), r)
            np.testing.assert_allclose(field(model, agg, r), fd, rtol=1e-6, atol=1e-10)

    def test_one_dimensional_field(self, rng):
        model = tiny_model("fourier", dim=1, n_max=4)
        agg = random_agg(model, rng)
        for x in rng.uniform(-3, 3, size=4):
            fd = -finite_difference_gradient(lambda v: potential(model, agg, v), [x])
            np.testing.assert_allclose(field(model, agg, [x]), fd, rtol=1e-6, atol=1e-10)

    @pytest.mark.parametrize("kind", ADDITIVE_KINDS)
    def test_linear_in_embedding(self, kind, rng):
        model = tiny_model(kind)
        a1, a2 = random_agg(model, rng), random_agg(model, rng)
        for r in rng.uniform(-3, 3, size=(5, 2)):
            assert potential(model, a1 + a2, r) == pytest.approx(potential(model, a1, r) + potential(model, a2, r),
                                                                 rel=1e-12, abs=1e-14)
            np.testing.assert_allclose(field(model, a1 + a2, r), field(model, a1, r) + field(model, a2, r),
                                       rtol=1e-12, atol=1e-14)
            assert potential(model, 2.5 * a1, r) == pytest.approx(2.5 * potential(model, a1, r), rel=1e-12, abs=1e-14)

    def test_embedding_shape_checked(self):
        model = tiny_model("fourier")
        with pytest.raises(ShapeError):
            potential(model, np.zeros(model.embedding_size + 1), (0, 0))

    @pytest.mark.parametrize("kind,dim", [("fourier", 2), ("fourier", 1), ("linear", 2)])
    def test_backward_matches_finite_differences(self, kind, dim, rng):
        model = tiny_model(kind, dim=dim)
        agg = random_agg(model, rng)[None]
        pts = rng.uniform(-3, 3, size=(1, 7, dim))
        cot_phi = rng.normal(size=(1, 7))
        cot_h = rng.normal(size=(1, 7, dim))

        def f(a):
            phi, h = model.potential_and_field(a, pts)
            return float(np.sum(cot_phi * phi) + np.sum(cot_h * h))

        d_agg, _ = model.backward(agg, pts, cot_phi, cot_h)
        np.testing.assert_allclose(d_agg, finite_difference_gradient(f, agg), rtol=1e-6, atol=1e-10)

    @pytest.mark.parametrize("kind", ["fcilr", "fcinr"])
    def test_field_cotangent_unsupported_for_fc(self, kind):
        model = tiny_model(kind)
        agg = np.zeros((1, model.embedding_size))
        pts = np.zeros((1, 3, 2))
        with pytest.raises(UnsupportedKindError):
            model.backward(agg, pts, np.zeros((1, 3)), np.zeros((1, 3, 2)))


class TestEmbedding:
    def test_identical_sources(self):
        model = tiny_model("fourier")
        f = [0.5, -1.0, 0.3, 0.4, 1.0]
        np.testing.assert_array_equal(embed(model, f), embed(model, list(f)))

    def test_zero_weight_hypernetwork(self, rng):
        model = tiny_model("fcilr")
        b = rng.normal(size=model.embedding_size)
        tensors = [np.zeros_like(t) for t in model.hyper.tensors()]
        tensors[-1] = b
        model = replace(model, hyper=model.hyper.replace_tensors(tensors))
        for f in ([0, 0, 1, 0, 1], [2.0, -1.0, 0.5, 0.5, 1.0]):
            np.testing.assert_array_equal(embed(model, f), b)

    def test_embedding_sizes(self):
        domain = Box.square()
        sizes = {kind: build_model(tiny_arch(kind), domain, make_rng(0)).embedding_size for kind in ALL_KINDS}
        assert sizes == {"fourier": 16, "fcilr": 7, "fcinr": 4 * 2 + 4 + 4 * 4 + 4 + 4 + 1, "linear": 3}
        assert build_model(tiny_arch("fourier", n_max=32), domain, make_rng(0)).embedding_size == 4096

    def test_linear_hypernetwork_is_single_layer(self):
        model = tiny_model("linear")
        assert model.hyper.dims == [5, 3]

    def test_counter(self):
        model = tiny_model("fourier")
        counter = OpCounter()
        model.embed_many(np.zeros((4, 5)), counter)
        assert counter.embed_calls == 4

    def test_feature_scaler(self):
        scaler = FeatureScaler.for_domain(Box((0.0, -2.0), (4.0, 2.0)), moment_scale=2.0)
        np.testing.assert_allclose(scaler.normalize([4.0, 0.0, 1.0, -2.0, 1.0]), [1.0, 0.0, 0.5, -1.0, 1.0])


class TestAggregate:
    def test_singleton(self, rng):
        e = rng.normal(size=6)
        np.testing.assert_array_equal(aggregate([e]), e)

    def test_permutation(self, rng):
        embs = list(rng.normal(size=(5, 6)))
        np.testing.assert_allclose(aggregate(embs), aggregate(embs[::-1]), rtol=1e-12, atol=1e-15)

    def test_rejects_empty_and_ragged(self):
        with pytest.raises(ShapeError):
            aggregate([])
        with pytest.raises(ShapeError):
            aggregate([np.zeros(2), np.zeros(3)])


class TestInferCollection:
    @pytest.mark.parametrize("kind", ADDITIVE_KINDS)
    def test_superposition(self, kind, rng):
        model = tiny_model(kind)
        col = random_collection(rng, 5, Box.square())
        pts = rng.uniform(-3, 3, size=(1000, 2))
        whole = infer_collection(model, col, pts)
        parts = [infer_collection(model, SourceCollection((s,)), pts) for s in col.sources]
        scale_phi = np.max(np.abs(whole.potential))
        np.testing.assert_allclose(sum(p.potential for p in parts), whole.potential, rtol=1e-10, atol=1e-12 * scale_phi)
        scale_h = np.max(np.abs(whole.field))
        np.testing.assert_allclose(sum(p.field for p in parts), whole.field, rtol=1e-10, atol=1e-12 * scale_h)

    def test_fcinr_does_not_superpose(self, rng):
        model = tiny_model("fcinr")
        assert not model.kind.additive
        col = random_collection(rng, 3, Box.square())
        pts = rng.uniform(-3, 3, size=(50, 2))
        whole = infer_collection(model, col, pts)
        parts = sum(infer_collection(model, SourceCollection((s,)), pts).potential for s in col.sources)
        assert not np.allclose(whole.potential, parts)

    def test_single_source_matches_direct(self, rng):
        model = tiny_model("fourier")
        src = Source((0.5, -1.0), (0.3, 0.4))
        pts = rng.uniform(-3, 3, size=(10, 2))
        out = infer_collection(model, SourceCollection((src,)), pts)
        agg = embed(model, [0.5, -1.0, 0.3, 0.4, 1.0])
        for r, phi in zip(pts, out.potential):
            assert phi == pytest.approx(potential(model, agg, r), rel=1e-13, abs=1e-15)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_permutation_invariance(self, kind, rng):
        model = tiny_model(kind)
        col = random_collection(rng, 4, Box.square())
        flipped = SourceCollection(tuple(reversed(col.sources)))
        pts = rng.uniform(-3, 3, size=(30, 2))
        np.testing.assert_allclose(infer_collection(model, col, pts).potential,
                                   infer_collection(model, flipped, pts).potential, rtol=1e-12, atol=1e-14)

    def test_counter_is_m_plus_n(self, rng):
        model = tiny_model("fourier")
        col = random_collection(rng, 7, Box.square())
        counter = OpCounter()
        infer_collection(model, col, rng.uniform(-3, 3, size=(40, 2)), counter)
        assert counter.amortized_ops == 47
        assert counter.pair_evals == 0

    def test_dimension_mismatch(self, rng):
        model = tiny_model("fourier", dim=1)
        with pytest.raises(UnsupportedKindError):
            infer_collection(model, random_collection(rng, 1, Box.square()), np.zeros((2, 2)))

    def test_oracle_replay(self, rng):
        col = random_collection(rng, 3, Box.square())
        pts = rng.uniform(-3, 3, size=(20, 2))
        truth = label_points(col, pts)
        out = infer_collection(OracleReplay(scale=1.05), col, pts)
        np.testing.assert_allclose(out.potential, 1.05 * truth.potential, rtol=1e-15)

    def test_source_features(self):
        col = SourceCollection((Source((1.0, 2.0), (3.0, 4.0), 0.5),))
        np.testing.assert_array_equal(source_features(col), [[1.0, 2.0, 3.0, 4.0, 0.5]])


class TestPersistence:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_round_trip(self, kind, tmp_path, rng):
        model = tiny_model(kind, output_scale=0.01)
        save_model(model, tmp_path / kind)
        loaded = load_model(tmp_path / kind)
        col = random_collection(rng, 2, Box.square())
        pts = rng.uniform(-3, 3, size=(20, 2))
        a, b = infer_collection(model, col, pts), infer_collection(loaded, col, pts)
        np.testing.assert_array_equal(a.potential, b.potential)
        np.testing.assert_array_equal(a.field, b.field)
        assert loaded.kind is model.kind

    def test_seed_in_meta(self, tmp_path):
        save_model(tiny_model("fourier", seed=42), tmp_path)
        meta = json.loads((tmp_path / "meta.json").read_text())
        assert meta["seed"] == 42
        assert load_model(tmp_path).seed == 42

    def test_meta_without_seed(self, tmp_path):
        save_model(replace(tiny_model("linear"), seed=None), tmp_path)
        assert json.loads((tmp_path / "meta.json").read_text())["seed"] is None
        assert load_model(tmp_path).seed is None

    def test_oracle_round_trip(self, tmp_path):
        save_model(OracleReplay(scale=1.05), tmp_path)
        assert load_model(tmp_path) == OracleReplay(scale=1.05)

    def test_malformed_meta(self, tmp_path):
        save_model(tiny_model("linear"), tmp_path)
        meta = (tmp_path / "meta.json").read_text().replace('"hyper_dims"', '"hyper_shape"')
        (tmp_path / "meta.json").write_text(meta)
        with pytest.raises(CheckpointIOError):
            load_model(tmp_path)

    def test_unknown_kind(self):
        with pytest.raises(UnsupportedKindError):
            ModelKind.parse("siren")
