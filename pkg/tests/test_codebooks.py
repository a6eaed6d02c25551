import itertools
import math

import numpy as np
import pytest
from scipy import integrate, stats

from pcdvq.chi import chi_cdf, chi_quantile
from pcdvq.codebooks import (
    DirectionCodebook,
    MagnitudeCodebook,
    build_direction_codebook,
    deserialize_codebook,
    e8_shell,
    enumerate_e8_directions,
    fnv1a64,
    greedy_direction_codebook,
    greedy_order,
    kmeans_codebook,
    load_codebook,
    lloyd_max_magnitude_codebook,
    magnitude_distortion,
    save_codebook,
    serialize_codebook,
)
from pcdvq.errors import CapacityError, FormatError


def brute_force_e8(squared_norm: int) -> set[tuple]:
    """Doubled coordinates of E8 points with the given squared norm, by exhaustive search."""
    out = set()
    bound = math.isqrt(4 * squared_norm)
    # integer points: doubled coordinates even, coordinate sum even
    ints = range(-(bound // 2), bound // 2 + 1)
    for c in itertools.product(ints, repeat=8):
        if sum(x * x for x in c) == squared_norm and sum(c) % 2 == 0:
            out.add(tuple(2 * x for x in c))
    # half-integer points: doubled coordinates odd
    odds = [x for x in range(-bound, bound + 1) if x % 2]
    for c in itertools.product(odds, repeat=8):
        if sum(x * x for x in c) == 4 * squared_norm and (sum(c) // 2) % 2 == 0:
            out.add(c)
    return out


def test_first_shell_matches_brute_force():
    shell = e8_shell(2)
    assert len(shell) == 240
    assert {tuple(int(v) for v in row) for row in shell} == brute_force_e8(2)
    integer_roots = np.sum(np.all(shell % 2 == 0, axis=1))
    assert integer_roots == 112


def test_second_shell_size():
    # theta series of E8: 240 q + 2160 q^2 + 6720 q^3 ...
    assert len(e8_shell(4)) == 2160
    assert len(e8_shell(6)) == 6720


def test_enumerate_first_shell_only():
    pool = enumerate_e8_directions(240)
    assert len(pool) == 240 and pool.shells == (2,)
    np.testing.assert_allclose(np.linalg.norm(pool.directions, axis=1), 1.0, atol=1e-12)


def test_pool_has_no_collinear_duplicates():
    pool = enumerate_e8_directions(10_000)
    assert len(pool) >= 10_000
    d = pool.directions
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    worst = -1.0
    for start in range(0, len(d), 2048):
        g = d[start : start + 2048] @ d.T
        rows = np.arange(g.shape[0])
        g[rows, start + rows] = -2.0
        worst = max(worst, float(g.max()))
    assert worst < 1 - 1e-9


def test_pool_is_deterministic_and_ordered_by_shell():
    a = enumerate_e8_directions(3000)
    b = enumerate_e8_directions(3000)
    np.testing.assert_array_equal(a.points2, b.points2)
    assert np.all(np.diff(a.norms) >= -1e-12)


def test_pool_capacity_error():
    with pytest.raises(CapacityError, match="required"):
        enumerate_e8_directions(10**6, max_shell=4)


def test_greedy_whole_pool_is_the_pool():
    pool = enumerate_e8_directions(240)
    cd = greedy_direction_codebook(pool.directions[:128], 7, seed=3)
    assert {tuple(np.round(e, 12)) for e in cd.entries} == {tuple(np.round(e, 12)) for e in pool.directions[:128]}


def test_greedy_picks_antipode_second():
    pool = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    seed = next(s for s in range(100) if np.random.default_rng(s).integers(3) == 0)
    order, objective = greedy_order(pool, 2, seed)
    assert list(order) == [0, 1]
    assert objective[1] == -1.0


def test_greedy_capacity_error():
    with pytest.raises(CapacityError):
        greedy_direction_codebook(np.eye(8), 4)


def test_greedy_objective_non_decreasing_and_deterministic(cd10):
    obj = cd10.provenance["min_max_cos"][1:]
    assert np.all(np.diff(obj) >= 0)
    again = build_direction_codebook(10, seed=0)
    np.testing.assert_array_equal(again.entries, cd10.entries)
    assert len(cd10) == 1024
    np.testing.assert_allclose(np.linalg.norm(cd10.entries, axis=1), 1.0, atol=1e-12)
    assert cd10.provenance["pool_size"] >= 4 * 1024


def test_greedy_beats_random_directions_on_min_angle(cd10):
    g = cd10.entries @ cd10.entries.T
    np.fill_diagonal(g, -1)
    greedy_max = g.max()
    for seed in range(5):
        r = np.random.default_rng(seed).standard_normal((1024, 8))
        r /= np.linalg.norm(r, axis=1, keepdims=True)
        gr = r @ r.T
        np.fill_diagonal(gr, -1)
        assert greedy_max < gr.max()


def test_prefix_is_a_smaller_codebook(cd10):
    p = cd10.prefix(6)
    assert p.bits == 6 and len(p) == 64
    np.testing.assert_array_equal(p.entries, cd10.entries[:64])


def test_single_cell_magnitude_is_truncated_mean():
    cr = lloyd_max_magnitude_codebook(0, k=8, tau=0.9999)
    max_r = chi_quantile(0.9999, 8)
    ref, _ = integrate.quad(lambda t: t * stats.chi.pdf(t, 8), 0, max_r, epsabs=1e-13)
    assert cr.entries[0] == pytest.approx(ref / stats.chi.cdf(max_r, 8), abs=1e-10)


def test_magnitude_codebook_invariants(cr2):
    assert cr2.converged
    assert len(cr2.entries) == 4
    assert 0 < cr2.entries[0] and np.all(np.diff(cr2.entries) > 0) and cr2.entries[-1] <= cr2.max_r
    assert chi_cdf(cr2.max_r, 8) == pytest.approx(0.9999, abs=1e-10)
    u = cr2.boundaries
    assert u[0] == 0.0 and len(u) == 5
    np.testing.assert_allclose(u[1:-1], 0.5 * (cr2.entries[:-1] + cr2.entries[1:]))


def test_magnitude_centroid_condition_by_quadrature(cr2):
    u = cr2.boundaries
    for j, r in enumerate(cr2.entries):
        num, _ = integrate.quad(lambda t: t * stats.chi.pdf(t, 8), u[j], u[j + 1], epsabs=1e-14)
        den = stats.chi.cdf(u[j + 1], 8) - stats.chi.cdf(u[j], 8)
        assert r == pytest.approx(num / den, abs=1e-6)


def test_magnitude_distortion_history_non_increasing(cr2):
    d = [h[1] for h in cr2.history]
    assert np.all(np.diff(d) <= 1e-15)
    quad = sum(
        integrate.quad(lambda t, r=r: (t - r) ** 2 * stats.chi.pdf(t, 8), cr2.boundaries[j], cr2.boundaries[j + 1])[0]
        for j, r in enumerate(cr2.entries)
    )
    assert magnitude_distortion(cr2.entries, 8, cr2.max_r) == pytest.approx(quad, rel=1e-9)


def test_magnitude_non_convergence_is_flagged():
    cr = lloyd_max_magnitude_codebook(4, k=8, max_iter=2)
    assert not cr.converged and cr.iterations == 2 and cr.movement >= 1e-6


def test_kmeans_recovers_exact_points():
    pts = np.random.default_rng(0).standard_normal((16, 4)) * 10
    cb = kmeans_codebook(pts, 4, seed=1)
    assert {tuple(np.round(c, 9)) for c in cb.entries} == {tuple(np.round(p, 9)) for p in pts}
    assert cb.distortion_history[-1] == pytest.approx(0.0, abs=1e-20)


def test_kmeans_single_cluster_is_mean(rng):
    x = rng.standard_normal((500, 3))
    np.testing.assert_allclose(kmeans_codebook(x, 0).entries[0], x.mean(axis=0), atol=1e-12)


def test_kmeans_history_non_increasing_and_deterministic(rng):
    x = rng.standard_normal((5000, 8))
    a = kmeans_codebook(x, 6, iters=20, seed=3)
    b = kmeans_codebook(x, 6, iters=20, seed=3)
    np.testing.assert_array_equal(a.entries, b.entries)
    assert np.all(np.diff(a.distortion_history) <= 1e-12)


def test_kmeans_reseeds_empty_clusters():
    # 10 identical points and 6 distinct ones; 8 clusters force empty cells
    x = np.vstack([np.zeros((10, 2)), np.arange(12, dtype=float).reshape(6, 2) + 5])
    cb = kmeans_codebook(x, 3, iters=10, seed=0)
    assert np.all(np.isfinite(cb.entries))
    assert cb.distortion_history[-1] <= cb.distortion_history[0]


@pytest.mark.slow
def test_kmeans_close_to_best_of_restarts():
    x = np.random.default_rng(7).standard_normal((100_000, 8))
    runs = [kmeans_codebook(x, 8, iters=30, seed=s).distortion_history[-1] for s in range(5)]
    assert runs[0] <= 1.05 * min(runs)


def test_codebook_round_trips(tmp_path, cd10, cr2):
    for cb in (cd10, cr2, kmeans_codebook(np.random.default_rng(0).standard_normal((300, 8)), 5)):
        blob = serialize_codebook(cb)
        path = tmp_path / "cb.pcdc"
        save_codebook(cb, path)
        assert path.read_bytes() == blob
        loaded = load_codebook(path)
        assert type(loaded) is type(cb)
        assert serialize_codebook(loaded) == blob


def test_loaded_codebook_fields(tmp_path, cd10, cr2):
    d = deserialize_codebook(serialize_codebook(cd10))
    assert isinstance(d, DirectionCodebook) and d.bits == 10 and d.k == 8
    np.testing.assert_allclose(np.linalg.norm(d.entries, axis=1), 1.0, atol=1e-6)
    m = deserialize_codebook(serialize_codebook(cr2))
    assert isinstance(m, MagnitudeCodebook) and m.bits == 2 and m.tau == 0.9999
    np.testing.assert_allclose(m.entries, cr2.entries, rtol=1e-7)


def test_codebook_header_layout(cr2):
    blob = serialize_codebook(cr2)
    assert blob[:4] == b"PCDC"
    assert int.from_bytes(blob[4:6], "little") == 1
    assert blob[6] == 1 and blob[7] == 8 and blob[8] == 2
    assert len(blob) == 22 + 4 * (4 + 5)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b[:10],
        lambda b: b[:-1],
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:4] + (2).to_bytes(2, "little") + b[6:],
        lambda b: b[:6] + bytes([7]) + b[7:],
        lambda b: b[:7] + bytes([4]) + b[8:],
        lambda b: b + b"\x00\x00\x00\x00",
    ],
    ids=["header-truncated", "payload-truncated", "magic", "version", "kind", "k-mismatch", "trailing"],
)
def test_corrupt_codebooks_rejected(mutate, cd10):
    with pytest.raises(FormatError):
        deserialize_codebook(mutate(serialize_codebook(cd10)))


def test_failed_load_leaves_no_object(tmp_path, cd10):
    path = tmp_path / "bad.pcdc"
    path.write_bytes(serialize_codebook(cd10)[:-3])
    with pytest.raises(FormatError):
        load_codebook(path)


def test_fnv1a64_reference_vectors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8
