#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <vector>

#include "seedflood/task.hpp"

using namespace seedflood;

namespace {

Task<double> small_task(TaskKind kind, size_t samples = 64, size_t features = 6,
                        size_t n_clients = 4) {
  TaskSpec spec;
  spec.kind = kind;
  spec.samples = samples;
  spec.features = features;
  spec.heldout_samples = 16;
  spec.noise_std = 0.0;
  spec.hidden = 5;
  spec.classes = 3;
  return generate_task<double>(spec, Seed{101}, n_clients);
}

ModelParams<double> random_params(const Task<double>& task, uint64_t seed) {
  auto params = ModelParams<double>::zeros(task.layer_shapes);
  auto stream = stream_from_seed(Seed{seed});
  for (auto& layer : params.layers) {
    for (auto& w : layer.data) w = 0.5 * stream.next_gaussian();
  }
  return params;
}

// Independent scalar-loop forward for the mlp: no shared code with task.hpp.
double mlp_loss_reference(const Task<double>& task,
                          const ModelParams<double>& params,
                          const Minibatch<double>& batch) {
  const auto& w1 = params.layers[0];
  const auto& b1 = params.layers[1];
  const auto& w2 = params.layers[2];
  const auto& b2 = params.layers[3];
  double total = 0.0;
  for (size_t k : batch.idx) {
    std::vector<double> hid(w1.shape.cols);
    for (size_t j = 0; j < w1.shape.cols; ++j) {
      double acc = b1.data[j];
      for (size_t i = 0; i < w1.shape.rows; ++i) {
        acc += batch.data->features[k * batch.data->n_features + i] *
               w1.data[i * w1.shape.cols + j];
      }
      hid[j] = std::tanh(acc);
    }
    std::vector<double> logits(w2.shape.cols);
    for (size_t j = 0; j < w2.shape.cols; ++j) {
      double acc = b2.data[j];
      for (size_t i = 0; i < w2.shape.rows; ++i) {
        acc += hid[i] * w2.data[i * w2.shape.cols + j];
      }
      logits[j] = acc;
    }
    double z = 0.0;
    for (double v : logits) z += std::exp(v);
    total += std::log(z) - logits[static_cast<size_t>(batch.data->labels[k])];
  }
  return total / static_cast<double>(batch.idx.size());
}

}  // namespace

TEST_CASE("least-squares at ground truth on noiseless data is zero") {
  auto task = small_task(TaskKind::LeastSquares);
  REQUIRE(task.ground_truth.has_value());
  const auto batch = task.full_train_batch();
  CHECK(loss(task, *task.ground_truth, batch) == 0.0);

  const auto grad = true_gradient(task, *task.ground_truth, batch);
  for (double g : grad.layers[0].data) CHECK(g == 0.0);
}

TEST_CASE("logistic loss at theta=0 is ln 2 per sample") {
  auto task = small_task(TaskKind::Logistic);
  const auto zero = ModelParams<double>::zeros(task.layer_shapes);
  const auto batch = task.full_train_batch();
  CHECK(loss(task, zero, batch) ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-14));
}

TEST_CASE("tiny-mlp matches the scalar-loop reference within 1e-10") {
  auto task = small_task(TaskKind::TinyMlp);
  auto params = random_params(task, 7);
  Minibatch<double> batch{&task.train, {0, 1, 2, 3}};
  const double got = loss(task, params, batch);
  const double want = mlp_loss_reference(task, params, batch);
  CHECK(std::abs(got - want) <= 1e-10);
}

TEST_CASE("logistic single-sample gradient at theta=0 is -y*x/2") {
  auto task = small_task(TaskKind::Logistic);
  const auto zero = ModelParams<double>::zeros(task.layer_shapes);
  Minibatch<double> batch{&task.train, {5}};
  const auto grad = true_gradient(task, zero, batch);
  const double y = task.train.labels[5];
  for (size_t i = 0; i < task.train.n_features; ++i) {
    const double want = -0.5 * y * task.train.features[5 * 6 + i];
    CHECK(grad.layers[0].data[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("true_gradient passes central finite differences on every kind") {
  for (TaskKind kind :
       {TaskKind::Logistic, TaskKind::LeastSquares, TaskKind::TinyMlp}) {
    CAPTURE(static_cast<int>(kind));
    auto task = small_task(kind);
    auto params = random_params(task, 31);
    Minibatch<double> batch{&task.train, {0, 3, 9, 12, 20, 33}};
    const auto grad = true_gradient(task, params, batch);

    auto stream = stream_from_seed(Seed{99});
    const double h = 1e-6;
    for (int dir = 0; dir < 20; ++dir) {
      // Random unit direction over all layers.
      std::vector<std::vector<double>> u;
      double norm = 0.0;
      for (const auto& layer : params.layers) {
        u.emplace_back(layer.size());
        for (auto& v : u.back()) {
          v = stream.next_gaussian();
          norm += v * v;
        }
      }
      norm = std::sqrt(norm);
      double directional = 0.0;
      auto shifted = params;
      for (size_t l = 0; l < params.layers.size(); ++l) {
        for (size_t e = 0; e < u[l].size(); ++e) {
          u[l][e] /= norm;
          directional += grad.layers[l].data[e] * u[l][e];
          shifted.layers[l].data[e] = params.layers[l].data[e] + h * u[l][e];
        }
      }
      const double plus = loss(task, shifted, batch);
      for (size_t l = 0; l < params.layers.size(); ++l) {
        for (size_t e = 0; e < u[l].size(); ++e) {
          shifted.layers[l].data[e] = params.layers[l].data[e] - h * u[l][e];
        }
      }
      const double minus = loss(task, shifted, batch);
      const double fd = (plus - minus) / (2.0 * h);
      CHECK(std::abs(fd - directional) <=
            1e-5 * std::max(1.0, std::abs(directional)));
    }
  }
}

TEST_CASE("generate_task shard sizes and determinism") {
  TaskSpec spec;
  spec.kind = TaskKind::Logistic;
  spec.samples = 1024;
  spec.features = 4;

  SUBCASE("1024 samples over 16 clients gives 64 each") {
    auto task = generate_task<double>(spec, Seed{5}, 16);
    for (const auto& shard : task.shards) CHECK(shard.size() == 64);
  }
  SUBCASE("1024 samples over 128 clients gives 8 each") {
    auto task = generate_task<double>(spec, Seed{5}, 128);
    for (const auto& shard : task.shards) CHECK(shard.size() == 8);
  }
  SUBCASE("remainder policy spread keeps sizes within one") {
    spec.samples = 103;
    auto task = generate_task<double>(spec, Seed{5}, 10);
    size_t total = 0;
    for (const auto& shard : task.shards) {
      CHECK(shard.size() >= 10);
      CHECK(shard.size() <= 11);
      total += shard.size();
    }
    CHECK(total == 103);
  }
  SUBCASE("same spec and seed reproduce identical shards and data") {
    auto a = generate_task<double>(spec, Seed{7}, 8);
    auto b = generate_task<double>(spec, Seed{7}, 8);
    CHECK(a.shards == b.shards);
    CHECK(a.train.features == b.train.features);
    CHECK(a.train.labels == b.train.labels);
  }
  SUBCASE("shards are disjoint and cover the train set") {
    auto task = generate_task<double>(spec, Seed{9}, 7);
    std::set<size_t> seen;
    for (const auto& shard : task.shards) {
      for (size_t idx : shard) {
        CHECK(seen.insert(idx).second);
      }
    }
    CHECK(seen.size() == spec.samples);
  }
  SUBCASE("fewer samples than clients is invalid") {
    spec.samples = 3;
    CHECK_THROWS_AS(generate_task<double>(spec, Seed{1}, 4),
                    std::invalid_argument);
    CHECK_THROWS_AS(generate_task<double>(spec, Seed{1}, 0),
                    std::invalid_argument);
  }
}

TEST_CASE("loss rejects shape mismatches") {
  auto task = small_task(TaskKind::Logistic);
  auto params = ModelParams<double>::zeros(task.layer_shapes);
  auto batch = task.full_train_batch();
  params.layers[0] = Tensor<double>(LayerShape::vector(7));
  CHECK_THROWS_AS(loss(task, params, batch), std::invalid_argument);
}

TEST_CASE("loss is deterministic in params and batch") {
  auto task = small_task(TaskKind::TinyMlp);
  auto params = random_params(task, 3);
  Minibatch<double> batch{&task.train, {1, 2, 3, 4, 5}};
  CHECK(loss(task, params, batch) == loss(task, params, batch));
}

TEST_CASE("float32 instantiation evaluates") {
  TaskSpec spec;
  spec.kind = TaskKind::LeastSquares;
  spec.samples = 32;
  spec.features = 4;
  spec.heldout_samples = 8;
  auto task = generate_task<float>(spec, Seed{11}, 2);
  REQUIRE(task.ground_truth.has_value());
  const auto batch = task.full_train_batch();
  CHECK(loss(task, *task.ground_truth, batch) ==
        doctest::Approx(0.0).epsilon(1e-10));
  auto grad = true_gradient(task, *task.ground_truth, batch);
  CHECK(grad.layers[0].data.size() == 4);
}

TEST_CASE("minibatch sampling draws from the client shard") {
  auto task = small_task(TaskKind::Logistic, 64, 6, 4);
  auto stream = stream_from_seed(Seed{55});
  auto batch = task.sample_minibatch(2, 32, stream);
  CHECK(batch.size() == 32);
  std::set<size_t> shard(task.shards[2].begin(), task.shards[2].end());
  for (size_t idx : batch.idx) CHECK(shard.contains(idx));
}
