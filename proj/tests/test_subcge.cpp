#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "seedflood/errors.hpp"
#include "seedflood/subcge.hpp"
#include "seedflood/task.hpp"
#include "seedflood/zo.hpp"

using namespace seedflood;

namespace {

const std::vector<LayerShape> kShapes{LayerShape::matrix(5, 3),
                                      LayerShape::vector(4),
                                      LayerShape::matrix(6, 6)};

// Oracle: U * E_ij * V^T by three explicit matrix products, no shortcuts.
template <typename T>
std::vector<T> triple_loop_outer(const Tensor<T>& u, const Tensor<T>& v,
                                 uint32_t ci, uint32_t cj, uint32_t r) {
  const size_t rows = u.shape.rows;
  const size_t cols = v.shape.rows;
  std::vector<T> e(r * r, T(0));
  e[ci * r + cj] = T(1);
  std::vector<T> ue(rows * r, T(0));
  for (size_t a = 0; a < rows; ++a) {
    for (size_t k = 0; k < r; ++k) {
      T acc = T(0);
      for (size_t q = 0; q < r; ++q) acc += u.at(a, q) * e[q * r + k];
      ue[a * r + k] = acc;
    }
  }
  std::vector<T> out(rows * cols, T(0));
  for (size_t a = 0; a < rows; ++a) {
    for (size_t b = 0; b < cols; ++b) {
      T acc = T(0);
      for (size_t k = 0; k < r; ++k) acc += ue[a * r + k] * v.at(b, k);
      out[a * cols + b] = acc;
    }
  }
  return out;
}

template <typename T>
std::vector<CoordUpdate> random_updates(size_t count, uint32_t rank,
                                        size_t n_matrix_layers,
                                        uint64_t seed) {
  auto stream = stream_from_seed(Seed{seed});
  std::vector<CoordUpdate> updates(count);
  for (auto& up : updates) {
    up.coefficient = 0.1 * stream.next_gaussian();
    up.coords.resize(n_matrix_layers);
    for (auto& c : up.coords) {
      c.i = stream.uniform_index(rank);
      c.j = stream.uniform_index(rank);
    }
  }
  return updates;
}

}  // namespace

TEST_CASE("bases for equal (seed, t, shapes, r) are bit-identical") {
  auto a = refresh_basis<double>(Seed{9}, 2000, kShapes, 3, 1000);
  auto b = refresh_basis<double>(Seed{9}, 2000, kShapes, 3, 1000);
  CHECK(a.epoch == 2);
  REQUIRE(a.u.size() == b.u.size());
  for (size_t l = 0; l < a.u.size(); ++l) {
    CHECK(a.u[l].data == b.u[l].data);
    CHECK(a.v[l].data == b.v[l].data);
  }
  auto c = refresh_basis<double>(Seed{9}, 3000, kShapes, 3, 1000);
  CHECK(c.u[0].data != a.u[0].data);
}

TEST_CASE("rank-1 basis on a 3x2 layer has the right shapes") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(3, 2)};
  auto basis = refresh_basis<double>(Seed{4}, 0, shapes, 1, 10);
  CHECK(basis.u[0].shape.rows == 3);
  CHECK(basis.u[0].shape.cols == 1);
  CHECK(basis.v[0].shape.rows == 2);
  CHECK(basis.v[0].shape.cols == 1);
}

TEST_CASE("invalid ranks are rejected") {
  CHECK_THROWS_AS(refresh_basis<double>(Seed{4}, 0, kShapes, 4, 10),
                  std::invalid_argument);  // 5x3 layer caps rank at 3
  CHECK_THROWS_AS(refresh_basis<double>(Seed{4}, 0, kShapes, 0, 10),
                  std::invalid_argument);
  CHECK_THROWS_AS(refresh_basis<double>(Seed{4}, 5, kShapes, 2, 10),
                  std::invalid_argument);  // t not a multiple of tau
}

TEST_CASE("basis entries pass gaussian moment checks") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(64, 64)};
  auto basis = refresh_basis<double>(Seed{12}, 0, shapes, 32, 100);
  double sum = 0.0, sumsq = 0.0;
  size_t count = 0;
  for (const auto& t : {basis.u[0], basis.v[0]}) {
    for (double x : t.data) {
      sum += x;
      sumsq += x * x;
      ++count;
    }
  }
  const double mean = sum / count;
  CHECK(std::abs(mean) <= 0.05);
  CHECK(std::abs(sumsq / count - mean * mean - 1.0) <= 0.1);
}

TEST_CASE("rank-1 canonical perturbation is the fixed outer product") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(4, 3)};
  auto basis = refresh_basis<double>(Seed{6}, 0, shapes, 1, 10);
  auto pert = sample_canonical_perturbation<double>(Seed{123}, basis, shapes,
                                                    1e-3);
  REQUIRE(pert.coords.size() == 1);
  CHECK(pert.coords[0].i == 0);
  CHECK(pert.coords[0].j == 0);

  auto z = ModelParams<double>::zeros(shapes);
  apply_perturbation_dense(z, pert, &basis, 1.0);
  const auto oracle = triple_loop_outer(basis.u[0], basis.v[0], 0, 0, 1);
  for (size_t e = 0; e < oracle.size(); ++e) {
    CHECK(z.layers[0].data[e] == doctest::Approx(oracle[e]).epsilon(1e-15));
  }
}

TEST_CASE("densified 5x3 perturbation matches the triple-loop oracle") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(5, 3)};
  auto basis = refresh_basis<double>(Seed{61}, 0, shapes, 2, 10);
  auto pert =
      sample_canonical_perturbation<double>(Seed{777}, basis, shapes, 1e-3);
  auto z = ModelParams<double>::zeros(shapes);
  apply_perturbation_dense(z, pert, &basis, 1.0);
  const auto oracle = triple_loop_outer(basis.u[0], basis.v[0],
                                        pert.coords[0].i, pert.coords[0].j, 2);
  CHECK(z.layers[0].data == oracle);  // exact: same products, no reduction
}

TEST_CASE("expected squared Frobenius norm of z is near rows*cols") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(12, 9)};
  double total = 0.0;
  const int trials = 4000;
  auto seed_stream = stream_from_seed(Seed{400});
  for (int trial = 0; trial < trials; ++trial) {
    auto basis = refresh_basis<double>(Seed{seed_stream.next_u64()}, 0, shapes,
                                       3, 10);
    auto pert = sample_canonical_perturbation<double>(
        Seed{seed_stream.next_u64()}, basis, shapes, 1e-3);
    auto z = ModelParams<double>::zeros(shapes);
    apply_perturbation_dense(z, pert, &basis, 1.0);
    for (double x : z.layers[0].data) total += x * x;
  }
  const double mean_sq_norm = total / trials;
  const double want = 12.0 * 9.0;
  CHECK(std::abs(mean_sq_norm - want) <= 0.10 * want);
}

TEST_CASE("accumulate identity and cancellation") {
  auto basis = refresh_basis<double>(Seed{8}, 0, kShapes, 3, 10);
  auto buffer = CoordBuffer<double>::make(basis);

  accumulate<double>(buffer, std::vector<CoordUpdate>{});
  for (const auto& a : buffer.a) {
    for (double x : a.data) CHECK(x == 0.0);
  }

  CoordUpdate up1{0.25, {{1, 2}, {0, 1}}};
  CoordUpdate up2{-0.25, {{1, 2}, {0, 1}}};
  std::vector<CoordUpdate> pair{up1, up2};
  accumulate<double>(buffer, pair);
  for (const auto& a : buffer.a) {
    for (double x : a.data) CHECK(x == 0.0);
  }
}

TEST_CASE("accumulate rejects out-of-range coordinates") {
  auto basis = refresh_basis<double>(Seed{8}, 0, kShapes, 3, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  std::vector<CoordUpdate> bad{CoordUpdate{1.0, {{3, 0}, {0, 0}}}};
  CHECK_THROWS_AS(accumulate<double>(buffer, bad), CorruptedMessageError);
  std::vector<CoordUpdate> wrong_count{CoordUpdate{1.0, {{0, 0}}}};
  CHECK_THROWS_AS(accumulate<double>(buffer, wrong_count),
                  CorruptedMessageError);
}

TEST_CASE("buffered aggregation equals naive per-message application") {
  auto run_check = [](auto tag, double tol) {
    using T = decltype(tag);
    auto basis = refresh_basis<T>(Seed{42}, 0, kShapes, 3, 10);
    auto buffer = CoordBuffer<T>::make(basis);
    auto params = ModelParams<T>::zeros(kShapes);
    auto naive = ModelParams<T>::zeros(kShapes);
    const auto updates = random_updates<T>(64, 3, 2, 99);

    accumulate<T>(buffer, updates);
    flush<T>(buffer, params, basis);

    // Naive oracle: densify each rank-1 update via the triple loop and
    // apply sequentially.
    for (const auto& up : updates) {
      size_t ordinal = 0;
      for (size_t l = 0; l < kShapes.size(); ++l) {
        if (!kShapes[l].is_matrix()) continue;
        const auto dense =
            triple_loop_outer(basis.u[ordinal], basis.v[ordinal],
                              up.coords[ordinal].i, up.coords[ordinal].j, 3);
        for (size_t e = 0; e < dense.size(); ++e) {
          naive.layers[l].data[e] -=
              static_cast<T>(up.coefficient) * dense[e];
        }
        ++ordinal;
      }
    }
    for (size_t l = 0; l < kShapes.size(); ++l) {
      for (size_t e = 0; e < params.layers[l].data.size(); ++e) {
        CHECK(std::abs(static_cast<double>(params.layers[l].data[e] -
                                           naive.layers[l].data[e])) <= tol);
      }
    }
    // Buffer is zeroed after the flush.
    for (const auto& a : buffer.a) {
      for (T x : a.data) CHECK(x == T(0));
    }
  };
  SUBCASE("float64 within 1e-12") { run_check(double{}, 1e-12); }
  SUBCASE("float32 within 1e-5") { run_check(float{}, 1e-5); }
}

TEST_CASE("flush of a zero buffer leaves the base bitwise unchanged") {
  auto basis = refresh_basis<double>(Seed{3}, 0, kShapes, 2, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  auto params = ModelParams<double>::zeros(kShapes);
  auto stream = stream_from_seed(Seed{10});
  for (auto& layer : params.layers) {
    for (auto& w : layer.data) w = stream.next_gaussian();
  }
  const auto before = params;
  flush<double>(buffer, params, basis);
  CHECK(params == before);
}

TEST_CASE("flush of E00 at rank 1 adds the u0 v0 outer product") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(4, 4)};
  auto basis = refresh_basis<double>(Seed{14}, 0, shapes, 1, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  buffer.a[0].at(0, 0) = 1.0;
  buffer.dirty = true;
  auto params = ModelParams<double>::zeros(shapes);
  flush<double>(buffer, params, basis);
  for (size_t i = 0; i < 4; ++i) {
    for (size_t j = 0; j < 4; ++j) {
      const double want = basis.u[0].at(i, 0) * basis.v[0].at(j, 0);
      CHECK(params.layers[0].at(i, j) ==
            doctest::Approx(want).epsilon(1e-14));
    }
  }
}

TEST_CASE("loss is invariant under flush (dual-path oracle)") {
  TaskSpec spec;
  spec.kind = TaskKind::TinyMlp;
  spec.samples = 32;
  spec.features = 6;
  spec.hidden = 5;
  spec.classes = 3;
  spec.heldout_samples = 8;
  auto task = generate_task<double>(spec, Seed{77}, 2);
  auto basis = refresh_basis<double>(Seed{5}, 0, task.layer_shapes, 3, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  auto params = ModelParams<double>::zeros(task.layer_shapes);
  auto stream = stream_from_seed(Seed{20});
  for (auto& layer : params.layers) {
    for (auto& w : layer.data) w = 0.3 * stream.next_gaussian();
  }
  const auto updates = random_updates<double>(48, 3, 2, 55);
  accumulate<double>(buffer, updates);

  const auto batch = task.full_train_batch();
  ModelParams<double> scratch;
  const auto& eff = effective_params(params, &buffer, &basis, scratch);
  const double buffered_loss = loss(task, eff, batch);

  flush<double>(buffer, params, basis);
  const double flushed_loss = loss(task, params, batch);
  CHECK(std::abs(buffered_loss - flushed_loss) <= 1e-12);
}

TEST_CASE("effective_params returns the base when nothing is buffered") {
  auto basis = refresh_basis<double>(Seed{3}, 0, kShapes, 2, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  auto params = ModelParams<double>::zeros(kShapes);
  ModelParams<double> scratch;
  const auto& eff = effective_params(params, &buffer, &basis, scratch);
  CHECK(&eff == &params);
}

TEST_CASE("measured apply costs separate the buffered and dense paths") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(48, 32),
                                       LayerShape::matrix(32, 40)};
  const uint32_t r = 8;
  const auto rep256 = count_apply_ops<double>(256, shapes, r, Seed{40});
  const auto rep512 = count_apply_ops<double>(512, shapes, r, Seed{40});

  // Coordinate cost is exactly one write per update per 2D layer.
  CHECK(rep256.subcge_coord_madds == 256 * 2);
  CHECK(rep512.subcge_coord_madds == 512 * 2);
  // Doubling the update count leaves the dense flush term unchanged.
  CHECK(rep256.subcge_flush_madds == rep512.subcge_flush_madds);

  const size_t d = 48 * 32 + 32 * 40;
  // Naive cost is proportional to updates * d, within 2x.
  CHECK(rep256.naive_madds >= 256 * d / 2);
  CHECK(rep256.naive_madds <= 256 * d * 2);
  CHECK(rep512.naive_madds >= rep256.naive_madds * 2 - 1);

  // SubCGE total is within 2x of the n + r*d model.
  const double model = 256.0 * 2 + static_cast<double>(r) * d;
  CHECK(rep256.subcge_total() >= model / 2);
  CHECK(rep256.subcge_total() <= model * 2);
}

TEST_CASE("flush epoch mismatch is rejected") {
  auto basis = refresh_basis<double>(Seed{3}, 0, kShapes, 2, 10);
  auto later = refresh_basis<double>(Seed{3}, 10, kShapes, 2, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  auto params = ModelParams<double>::zeros(kShapes);
  CHECK_THROWS_AS(flush<double>(buffer, params, later), EpochMismatchError);
}
