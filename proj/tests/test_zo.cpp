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

ModelParams<double> gaussian_params(std::span<const LayerShape> shapes,
                                    uint64_t seed, double scale = 1.0) {
  auto params = ModelParams<double>::zeros(shapes);
  auto stream = stream_from_seed(Seed{seed});
  for (auto& layer : params.layers) {
    for (auto& w : layer.data) w = scale * stream.next_gaussian();
  }
  return params;
}

double half_sq_norm(const ModelParams<double>& p) {
  double acc = 0.0;
  for (const auto& layer : p.layers) {
    for (double w : layer.data) acc += w * w;
  }
  return 0.5 * acc;
}

double dot(const ModelParams<double>& a, const ModelParams<double>& b) {
  double acc = 0.0;
  for (size_t l = 0; l < a.layers.size(); ++l) {
    for (size_t e = 0; e < a.layers[l].data.size(); ++e) {
      acc += a.layers[l].data[e] * b.layers[l].data[e];
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("plus then minus restores the exact starting bits") {
  const std::vector<LayerShape> shapes{LayerShape::vector(64)};
  auto params = gaussian_params(shapes, 5);
  const auto before = params;
  auto pert = sample_full_gaussian(Seed{99}, 1e-3);
  PerturbUndo<double> undo;
  perturb_in_place<double>(params, nullptr, pert, PerturbSign::Plus, undo);
  CHECK(!(params == before));
  perturb_in_place<double>(params, nullptr, pert, PerturbSign::Minus, undo);
  CHECK(params == before);
  // The full MeZO cycle: +1, -1, -1, reset.
  perturb_in_place<double>(params, nullptr, pert, PerturbSign::Plus, undo);
  perturb_in_place<double>(params, nullptr, pert, PerturbSign::Minus, undo);
  perturb_in_place<double>(params, nullptr, pert, PerturbSign::Minus, undo);
  perturb_in_place<double>(params, nullptr, pert, PerturbSign::Reset, undo);
  CHECK(params == before);
}

TEST_CASE("perturbation magnitude is eps times the direction norm") {
  const std::vector<LayerShape> shapes{LayerShape::vector(10)};
  auto params = gaussian_params(shapes, 6);
  const auto before = params;
  auto pert = sample_full_gaussian(Seed{123}, 1e-3);

  auto z = ModelParams<double>::zeros(shapes);
  apply_perturbation_dense(z, pert, nullptr, 1.0);

  PerturbUndo<double> undo;
  perturb_in_place<double>(params, nullptr, pert, PerturbSign::Plus, undo);
  double diff_sq = 0.0, z_sq = 0.0;
  for (size_t e = 0; e < 10; ++e) {
    const double d = params.layers[0].data[e] - before.layers[0].data[e];
    diff_sq += d * d;
    z_sq += z.layers[0].data[e] * z.layers[0].data[e];
  }
  CHECK(std::sqrt(diff_sq) ==
        doctest::Approx(1e-3 * std::sqrt(z_sq)).epsilon(1e-9));
}

TEST_CASE("subcge perturbation routes 2D layers into the buffer cell") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(4, 4),
                                       LayerShape::vector(3)};
  auto basis = refresh_basis<double>(Seed{7}, 0, shapes, 2, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  auto params = gaussian_params(shapes, 8);
  const auto params_before = params;

  auto pert =
      sample_canonical_perturbation<double>(Seed{55}, basis, shapes, 1e-3);
  PerturbUndo<double> undo;
  perturb_in_place<double>(params, &buffer, pert, PerturbSign::Plus, undo);

  // 2D base weights untouched; the buffer cell took exactly +eps.
  CHECK(params.layers[0].data == params_before.layers[0].data);
  CHECK(buffer.a[0].at(pert.coords[0].i, pert.coords[0].j) == 1e-3);
  // 1D layer moved.
  CHECK(params.layers[1].data != params_before.layers[1].data);

  perturb_in_place<double>(params, &buffer, pert, PerturbSign::Reset, undo);
  CHECK(params == params_before);
  CHECK(buffer.a[0].at(pert.coords[0].i, pert.coords[0].j) == 0.0);
}

TEST_CASE("two-point rule is exact on quadratics") {
  const std::vector<LayerShape> shapes{LayerShape::vector(20)};
  auto params = gaussian_params(shapes, 10);
  auto pert = sample_full_gaussian(Seed{1000}, 1e-3);
  auto z = ModelParams<double>::zeros(shapes);
  apply_perturbation_dense(z, pert, nullptr, 1.0);

  const double alpha = two_point_alpha<double>(
      params, nullptr, pert, [&]() { return half_sq_norm(params); });
  CHECK(std::abs(alpha - dot(params, z)) <= 1e-10);
}

TEST_CASE("two-point rule is exact on quadratics through the buffer") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(5, 4),
                                       LayerShape::vector(4)};
  auto basis = refresh_basis<double>(Seed{70}, 0, shapes, 3, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  auto params = gaussian_params(shapes, 11);
  auto pert =
      sample_canonical_perturbation<double>(Seed{2000}, basis, shapes, 1e-3);
  auto z = ModelParams<double>::zeros(shapes);
  apply_perturbation_dense(z, pert, &basis, 1.0);

  ModelParams<double> scratch;
  auto loss_fn = [&]() {
    return half_sq_norm(effective_params(params, &buffer, &basis, scratch));
  };
  const double alpha = two_point_alpha<double>(params, &buffer, pert, loss_fn);
  CHECK(std::abs(alpha - dot(params, z)) <= 1e-9);
}

TEST_CASE("a direction the loss ignores gives alpha exactly zero") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(4, 4)};
  auto basis = refresh_basis<double>(Seed{3}, 0, shapes, 2, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  auto params = gaussian_params(shapes, 12);
  auto pert =
      sample_canonical_perturbation<double>(Seed{31}, basis, shapes, 1e-3);
  const double alpha = two_point_alpha<double>(params, &buffer, pert,
                                               []() { return 1.25; });
  CHECK(alpha == 0.0);
}

TEST_CASE("loss reading only the 1D layer sees only the 1D perturbation") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(6, 6),
                                       LayerShape::vector(8)};
  auto basis = refresh_basis<double>(Seed{14}, 0, shapes, 4, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  auto params = gaussian_params(shapes, 13);
  auto pert =
      sample_canonical_perturbation<double>(Seed{888}, basis, shapes, 1e-3);
  auto z = ModelParams<double>::zeros(shapes);
  apply_perturbation_dense(z, pert, &basis, 1.0);

  auto loss_1d_only = [&]() {
    double acc = 0.0;
    for (double w : params.layers[1].data) acc += w * w;
    return 0.5 * acc;
  };
  const double alpha = two_point_alpha<double>(params, &buffer, pert,
                                               loss_1d_only);
  double want = 0.0;
  for (size_t e = 0; e < 8; ++e) {
    want += params.layers[1].data[e] * z.layers[1].data[e];
  }
  CHECK(alpha == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("halving eps cuts the two-point error by about four") {
  TaskSpec spec;
  spec.kind = TaskKind::TinyMlp;
  spec.samples = 24;
  spec.features = 5;
  spec.hidden = 4;
  spec.classes = 3;
  spec.heldout_samples = 8;
  auto task = generate_task<double>(spec, Seed{21}, 2);
  auto params = gaussian_params(task.layer_shapes, 17, 0.6);
  Minibatch<double> batch{&task.train, {0, 1, 2, 3, 4, 5, 6, 7}};
  const auto grad = true_gradient(task, params, batch);

  double ratios_ok = 0, trials = 0;
  auto seeds = stream_from_seed(Seed{5005});
  for (int rep = 0; rep < 10; ++rep) {
    const Seed z_seed{seeds.next_u64()};
    auto z = ModelParams<double>::zeros(task.layer_shapes);
    apply_perturbation_dense(z, sample_full_gaussian(z_seed, 1.0), nullptr,
                             1.0);
    const double dd = dot(grad, z);
    auto alpha_at = [&](double eps) {
      auto pert = sample_full_gaussian(z_seed, eps);
      return two_point_alpha<double>(params, nullptr, pert,
                                     [&]() { return loss(task, params, batch); });
    };
    const double err_big = std::abs(alpha_at(2e-2) - dd);
    const double err_small = std::abs(alpha_at(1e-2) - dd);
    if (err_big < 1e-11) continue;  // curvature-free direction, no signal
    ++trials;
    const double ratio = err_big / err_small;
    if (ratio >= 3.0 && ratio <= 5.0) ++ratios_ok;
  }
  REQUIRE(trials >= 5);
  // The eps^2 law holds per direction up to higher-order terms; require a
  // clear majority inside the [3, 5] window.
  CHECK(ratios_ok >= trials * 0.7);
}

TEST_CASE("mean of many single-direction estimates approaches the gradient") {
  const std::vector<LayerShape> shapes{LayerShape::vector(12)};
  auto params = gaussian_params(shapes, 23);
  // f = 0.5||theta||^2, so the true gradient is theta itself.
  auto mean_est = ModelParams<double>::zeros(shapes);
  const int m = 10000;
  auto seeds = stream_from_seed(Seed{31337});
  for (int k = 0; k < m; ++k) {
    const Seed z_seed{seeds.next_u64()};
    auto pert = sample_full_gaussian(z_seed, 1e-3);
    const double alpha = two_point_alpha<double>(
        params, nullptr, pert, [&]() { return half_sq_norm(params); });
    apply_perturbation_dense(mean_est, pert, nullptr, alpha / m);
  }
  double err_sq = 0.0, grad_sq = 0.0;
  for (size_t e = 0; e < 12; ++e) {
    const double d = mean_est.layers[0].data[e] - params.layers[0].data[e];
    err_sq += d * d;
    grad_sq += params.layers[0].data[e] * params.layers[0].data[e];
  }
  CHECK(std::sqrt(err_sq / grad_sq) <= 0.05);
}

TEST_CASE("no drift across twenty thousand perturb cycles") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(6, 5),
                                       LayerShape::vector(7)};
  auto basis = refresh_basis<double>(Seed{1}, 0, shapes, 3, 10);
  auto buffer = CoordBuffer<double>::make(basis);
  auto params = gaussian_params(shapes, 29);
  const auto params_before = params;
  const auto buffer_before = buffer.a;

  auto seeds = stream_from_seed(Seed{606});
  ModelParams<double> scratch;
  for (int cycle = 0; cycle < 20000; ++cycle) {
    const Seed z_seed{seeds.next_u64()};
    if (cycle % 2 == 0) {
      auto pert =
          sample_canonical_perturbation<double>(z_seed, basis, shapes, 1e-3);
      two_point_alpha<double>(params, &buffer, pert, [&]() {
        return half_sq_norm(
            effective_params(params, &buffer, &basis, scratch));
      });
    } else {
      auto pert = sample_full_gaussian(z_seed, 1e-3);
      two_point_alpha<double>(params, nullptr, pert,
                              [&]() { return half_sq_norm(params); });
    }
  }
  CHECK(params == params_before);
  for (size_t l = 0; l < buffer.a.size(); ++l) {
    CHECK(buffer.a[l].data == buffer_before[l].data);
  }
}

TEST_CASE("a throwing loss still restores the exact state") {
  const std::vector<LayerShape> shapes{LayerShape::vector(16)};
  auto params = gaussian_params(shapes, 37);
  const auto before = params;
  auto pert = sample_full_gaussian(Seed{404}, 1e-3);
  int calls = 0;
  auto loss_fn = [&]() -> double {
    if (++calls == 2) throw NumericOverflowError("boom");
    return half_sq_norm(params);
  };
  CHECK_THROWS_AS(two_point_alpha<double>(params, nullptr, pert, loss_fn),
                  NumericOverflowError);
  CHECK(params == before);
}

TEST_CASE("stale-epoch perturbations are rejected") {
  const std::vector<LayerShape> shapes{LayerShape::matrix(4, 4)};
  auto basis0 = refresh_basis<double>(Seed{2}, 0, shapes, 2, 10);
  auto basis1 = refresh_basis<double>(Seed{2}, 10, shapes, 2, 10);
  auto buffer = CoordBuffer<double>::make(basis1);
  auto params = ModelParams<double>::zeros(shapes);
  auto pert =
      sample_canonical_perturbation<double>(Seed{5}, basis0, shapes, 1e-3);
  PerturbUndo<double> undo;
  CHECK_THROWS_AS(
      perturb_in_place<double>(params, &buffer, pert, PerturbSign::Plus, undo),
      EpochMismatchError);
  CHECK_THROWS_AS(apply_perturbation_dense(params, pert, &basis1, 1.0),
                  EpochMismatchError);
}
