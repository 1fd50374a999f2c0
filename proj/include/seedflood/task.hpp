#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "seedflood/errors.hpp"
#include "seedflood/rng.hpp"
#include "seedflood/tensor.hpp"

namespace seedflood {

enum class TaskKind { Logistic, LeastSquares, TinyMlp };

/// Labeled sample block, row-major features.
template <typename T>
struct Dataset {
  size_t n_samples = 0;
  size_t n_features = 0;
  std::vector<T> features;  // n_samples x n_features
  std::vector<T> labels;    // +-1 (logistic), real (lsq), class id (mlp)

  std::span<const T> row(size_t i) const {
    return {features.data() + i * n_features, n_features};
  }
};

/// Index view into a dataset; batches never copy feature rows.
template <typename T>
struct Minibatch {
  const Dataset<T>* data = nullptr;
  std::vector<size_t> idx;

  size_t size() const { return idx.size(); }
};

struct TaskSpec {
  TaskKind kind = TaskKind::Logistic;
  size_t samples = 1024;
  size_t features = 32;
  size_t heldout_samples = 256;
  double label_noise = 0.05;  // logistic label-flip probability
  double noise_std = 0.0;     // lsq observation noise
  double teacher_scale = 3.0; // logistic planted-logit scale
  size_t hidden = 16;         // mlp
  size_t classes = 3;         // mlp
  double blob_separation = 2.5;  // mlp class-mean spread
};

/// A training problem: a model architecture, a train/heldout dataset pair,
/// and disjoint per-client shards whose union is the train set.
template <typename T>
struct Task {
  TaskKind kind = TaskKind::Logistic;
  TaskSpec spec;
  Dataset<T> train;
  Dataset<T> heldout;
  std::vector<std::vector<size_t>> shards;
  std::vector<LayerShape> layer_shapes;
  std::optional<ModelParams<T>> ground_truth;

  size_t n_clients() const { return shards.size(); }

  Minibatch<T> full_train_batch() const {
    Minibatch<T> b{&train, {}};
    b.idx.resize(train.n_samples);
    for (size_t i = 0; i < train.n_samples; ++i) b.idx[i] = i;
    return b;
  }

  Minibatch<T> heldout_batch() const {
    Minibatch<T> b{&heldout, {}};
    b.idx.resize(heldout.n_samples);
    for (size_t i = 0; i < heldout.n_samples; ++i) b.idx[i] = i;
    return b;
  }

  /// With-replacement uniform sample from one client's shard.
  Minibatch<T> sample_minibatch(size_t client, size_t batch_size,
                                RandomStream& stream) const {
    const auto& shard = shards.at(client);
    Minibatch<T> b{&train, {}};
    b.idx.reserve(batch_size);
    for (size_t k = 0; k < batch_size; ++k) {
      b.idx.push_back(shard[stream.uniform_index(
          static_cast<uint32_t>(shard.size()))]);
    }
    return b;
  }
};

/// Model architecture implied by a task spec, without generating data.
inline std::vector<LayerShape> task_layer_shapes(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::Logistic:
    case TaskKind::LeastSquares:
      return {LayerShape::vector(spec.features)};
    case TaskKind::TinyMlp:
      return {LayerShape::matrix(spec.features, spec.hidden),
              LayerShape::vector(spec.hidden),
              LayerShape::matrix(spec.hidden, spec.classes),
              LayerShape::vector(spec.classes)};
  }
  return {};
}

namespace detail {

inline double softplus(double t) {
  // log(1 + exp(t)) without overflow.
  if (t > 0) return t + std::log1p(std::exp(-t));
  return std::log1p(std::exp(t));
}

template <typename T>
void check_conformance(const Task<T>& task, const ModelParams<T>& params,
                       const Minibatch<T>& batch) {
  if (batch.data == nullptr || batch.size() == 0) {
    throw std::invalid_argument("loss: empty minibatch");
  }
  if (params.layers.size() != task.layer_shapes.size()) {
    throw std::invalid_argument("loss: layer count mismatch");
  }
  for (size_t l = 0; l < params.layers.size(); ++l) {
    if (!(params.layers[l].shape == task.layer_shapes[l])) {
      throw std::invalid_argument("loss: layer shape mismatch");
    }
  }
  if (batch.data->n_features != task.train.n_features) {
    throw std::invalid_argument("loss: feature dimension mismatch");
  }
}

template <typename T>
double dot_row(std::span<const T> x, const std::vector<T>& w) {
  double acc = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    acc += static_cast<double>(x[i]) * static_cast<double>(w[i]);
  }
  return acc;
}

}  // namespace detail

/// Mean loss of `params` on `batch`: logistic cross-entropy, 0.5*squared
/// error, or softmax cross-entropy depending on the task kind.
template <typename T>
double loss(const Task<T>& task, const ModelParams<T>& params,
            const Minibatch<T>& batch) {
  detail::check_conformance(task, params, batch);
  const auto& data = *batch.data;
  double total = 0.0;

  switch (task.kind) {
    case TaskKind::Logistic: {
      const auto& w = params.layers[0].data;
      for (size_t k : batch.idx) {
        const double t = detail::dot_row(data.row(k), w) *
                         static_cast<double>(data.labels[k]);
        total += detail::softplus(-t);
      }
      break;
    }
    case TaskKind::LeastSquares: {
      const auto& w = params.layers[0].data;
      for (size_t k : batch.idx) {
        const double r = detail::dot_row(data.row(k), w) -
                         static_cast<double>(data.labels[k]);
        total += 0.5 * r * r;
      }
      break;
    }
    case TaskKind::TinyMlp: {
      const auto& w1 = params.layers[0];  // f x h
      const auto& b1 = params.layers[1];  // h
      const auto& w2 = params.layers[2];  // h x c
      const auto& b2 = params.layers[3];  // c
      const size_t h = w1.shape.cols;
      const size_t c = w2.shape.cols;
      std::vector<double> hid(h), logits(c);
      for (size_t k : batch.idx) {
        const auto x = data.row(k);
        for (size_t j = 0; j < h; ++j) {
          double acc = static_cast<double>(b1.data[j]);
          for (size_t i = 0; i < x.size(); ++i) {
            acc += static_cast<double>(x[i]) *
                   static_cast<double>(w1.at(i, j));
          }
          hid[j] = std::tanh(acc);
        }
        for (size_t j = 0; j < c; ++j) {
          double acc = static_cast<double>(b2.data[j]);
          for (size_t i = 0; i < h; ++i) {
            acc += hid[i] * static_cast<double>(w2.at(i, j));
          }
          logits[j] = acc;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double lse = 0.0;
        for (double v : logits) lse += std::exp(v - mx);
        lse = mx + std::log(lse);
        const auto y = static_cast<size_t>(data.labels[k]);
        total += lse - logits[y];
      }
      break;
    }
  }

  const double mean = total / static_cast<double>(batch.size());
  if (!std::isfinite(mean)) {
    throw NumericOverflowError("loss: non-finite value");
  }
  return mean;
}

/// Classification accuracy on a batch (mlp and logistic); lsq returns 0.
template <typename T>
double accuracy(const Task<T>& task, const ModelParams<T>& params,
                const Minibatch<T>& batch) {
  detail::check_conformance(task, params, batch);
  const auto& data = *batch.data;
  size_t correct = 0;

  switch (task.kind) {
    case TaskKind::Logistic: {
      const auto& w = params.layers[0].data;
      for (size_t k : batch.idx) {
        const double t = detail::dot_row(data.row(k), w);
        const double y = static_cast<double>(data.labels[k]);
        if ((t >= 0 && y > 0) || (t < 0 && y < 0)) ++correct;
      }
      break;
    }
    case TaskKind::LeastSquares:
      return 0.0;
    case TaskKind::TinyMlp: {
      const auto& w1 = params.layers[0];
      const auto& b1 = params.layers[1];
      const auto& w2 = params.layers[2];
      const auto& b2 = params.layers[3];
      const size_t h = w1.shape.cols;
      const size_t c = w2.shape.cols;
      std::vector<double> hid(h), logits(c);
      for (size_t k : batch.idx) {
        const auto x = data.row(k);
        for (size_t j = 0; j < h; ++j) {
          double acc = static_cast<double>(b1.data[j]);
          for (size_t i = 0; i < x.size(); ++i) {
            acc += static_cast<double>(x[i]) *
                   static_cast<double>(w1.at(i, j));
          }
          hid[j] = std::tanh(acc);
        }
        size_t best = 0;
        double bestv = -1e300;
        for (size_t j = 0; j < c; ++j) {
          double acc = static_cast<double>(b2.data[j]);
          for (size_t i = 0; i < h; ++i) {
            acc += hid[i] * static_cast<double>(w2.at(i, j));
          }
          logits[j] = acc;
          if (acc > bestv) {
            bestv = acc;
            best = j;
          }
        }
        if (best == static_cast<size_t>(data.labels[k])) ++correct;
      }
      break;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

/// Analytic gradient of `loss`. Test and first-order-baseline use only; the
/// decentralized method under study never calls this.
template <typename T>
ModelParams<T> true_gradient(const Task<T>& task, const ModelParams<T>& params,
                             const Minibatch<T>& batch) {
  detail::check_conformance(task, params, batch);
  const auto& data = *batch.data;
  auto shapes = params.shapes();
  auto grad = ModelParams<T>::zeros(shapes);
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  switch (task.kind) {
    case TaskKind::Logistic: {
      const auto& w = params.layers[0].data;
      auto& g = grad.layers[0].data;
      std::vector<double> acc(w.size(), 0.0);
      for (size_t k : batch.idx) {
        const auto x = data.row(k);
        const double y = static_cast<double>(data.labels[k]);
        const double t = detail::dot_row(x, w) * y;
        const double s = -y / (1.0 + std::exp(t));  // d softplus(-yt)/d logit
        for (size_t i = 0; i < x.size(); ++i) {
          acc[i] += s * static_cast<double>(x[i]);
        }
      }
      for (size_t i = 0; i < g.size(); ++i) {
        g[i] = static_cast<T>(acc[i] * inv_b);
      }
      break;
    }
    case TaskKind::LeastSquares: {
      const auto& w = params.layers[0].data;
      auto& g = grad.layers[0].data;
      std::vector<double> acc(w.size(), 0.0);
      for (size_t k : batch.idx) {
        const auto x = data.row(k);
        const double r = detail::dot_row(x, w) -
                         static_cast<double>(data.labels[k]);
        for (size_t i = 0; i < x.size(); ++i) {
          acc[i] += r * static_cast<double>(x[i]);
        }
      }
      for (size_t i = 0; i < g.size(); ++i) {
        g[i] = static_cast<T>(acc[i] * inv_b);
      }
      break;
    }
    case TaskKind::TinyMlp: {
      const auto& w1 = params.layers[0];
      const auto& b1 = params.layers[1];
      const auto& w2 = params.layers[2];
      const auto& b2 = params.layers[3];
      const size_t f = w1.shape.rows;
      const size_t h = w1.shape.cols;
      const size_t c = w2.shape.cols;
      std::vector<double> gw1(f * h, 0.0), gb1(h, 0.0);
      std::vector<double> gw2(h * c, 0.0), gb2(c, 0.0);
      std::vector<double> pre(h), hid(h), logits(c), prob(c), dhid(h);
      for (size_t k : batch.idx) {
        const auto x = data.row(k);
        for (size_t j = 0; j < h; ++j) {
          double acc = static_cast<double>(b1.data[j]);
          for (size_t i = 0; i < f; ++i) {
            acc += static_cast<double>(x[i]) *
                   static_cast<double>(w1.at(i, j));
          }
          pre[j] = acc;
          hid[j] = std::tanh(acc);
        }
        for (size_t j = 0; j < c; ++j) {
          double acc = static_cast<double>(b2.data[j]);
          for (size_t i = 0; i < h; ++i) {
            acc += hid[i] * static_cast<double>(w2.at(i, j));
          }
          logits[j] = acc;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (size_t j = 0; j < c; ++j) {
          prob[j] = std::exp(logits[j] - mx);
          z += prob[j];
        }
        const auto y = static_cast<size_t>(data.labels[k]);
        for (size_t j = 0; j < c; ++j) {
          prob[j] = prob[j] / z - (j == y ? 1.0 : 0.0);  // dL/dlogit
          gb2[j] += prob[j];
        }
        for (size_t i = 0; i < h; ++i) {
          double acc = 0.0;
          for (size_t j = 0; j < c; ++j) {
            gw2[i * c + j] += hid[i] * prob[j];
            acc += static_cast<double>(w2.at(i, j)) * prob[j];
          }
          dhid[i] = acc * (1.0 - hid[i] * hid[i]);
          gb1[i] += dhid[i];
        }
        for (size_t i = 0; i < f; ++i) {
          const double xi = static_cast<double>(x[i]);
          for (size_t j = 0; j < h; ++j) {
            gw1[i * h + j] += xi * dhid[j];
          }
        }
      }
      auto scale_into = [inv_b](const std::vector<double>& src,
                                std::vector<T>& dst) {
        for (size_t i = 0; i < src.size(); ++i) {
          dst[i] = static_cast<T>(src[i] * inv_b);
        }
      };
      scale_into(gw1, grad.layers[0].data);
      scale_into(gb1, grad.layers[1].data);
      scale_into(gw2, grad.layers[2].data);
      scale_into(gb2, grad.layers[3].data);
      break;
    }
  }
  return grad;
}

/// Deterministic synthetic task with equal-size (+-1 under the "spread"
/// remainder policy) disjoint client shards covering the train set.
template <typename T>
Task<T> generate_task(const TaskSpec& spec, Seed seed, size_t n_clients) {
  if (n_clients < 1) {
    throw std::invalid_argument("generate_task: n_clients must be >= 1");
  }
  if (spec.samples < n_clients) {
    throw std::invalid_argument(
        "generate_task: need at least one sample per client");
  }

  Task<T> task;
  task.kind = spec.kind;
  task.spec = spec;
  RandomStream stream = stream_from_seed(seed);

  const size_t f = spec.features;
  auto fill_features = [&](Dataset<T>& ds, size_t n) {
    ds.n_samples = n;
    ds.n_features = f;
    ds.features.resize(n * f);
    for (auto& v : ds.features) v = static_cast<T>(stream.next_gaussian());
    ds.labels.resize(n);
  };

  task.layer_shapes = task_layer_shapes(spec);
  switch (spec.kind) {
    case TaskKind::Logistic: {
      auto truth = ModelParams<T>::zeros(task.layer_shapes);
      const double scale = spec.teacher_scale / std::sqrt(double(f));
      for (auto& v : truth.layers[0].data) {
        v = static_cast<T>(stream.next_gaussian() * scale);
      }
      auto label = [&](Dataset<T>& ds) {
        for (size_t k = 0; k < ds.n_samples; ++k) {
          double t = detail::dot_row(ds.row(k), truth.layers[0].data);
          double y = t >= 0 ? 1.0 : -1.0;
          if (stream.next_unit() < spec.label_noise) y = -y;
          ds.labels[k] = static_cast<T>(y);
        }
      };
      fill_features(task.train, spec.samples);
      label(task.train);
      fill_features(task.heldout, spec.heldout_samples);
      label(task.heldout);
      task.ground_truth = std::move(truth);
      break;
    }
    case TaskKind::LeastSquares: {
      auto truth = ModelParams<T>::zeros(task.layer_shapes);
      for (auto& v : truth.layers[0].data) {
        v = static_cast<T>(stream.next_gaussian() / std::sqrt(double(f)));
      }
      auto label = [&](Dataset<T>& ds) {
        for (size_t k = 0; k < ds.n_samples; ++k) {
          double t = detail::dot_row(ds.row(k), truth.layers[0].data);
          ds.labels[k] =
              static_cast<T>(t + spec.noise_std * stream.next_gaussian());
        }
      };
      fill_features(task.train, spec.samples);
      label(task.train);
      fill_features(task.heldout, spec.heldout_samples);
      label(task.heldout);
      task.ground_truth = std::move(truth);
      break;
    }
    case TaskKind::TinyMlp: {
      const size_t c = spec.classes;
      // Gaussian blobs: one mean per class, unit within-class noise.
      std::vector<double> means(c * f);
      for (auto& v : means) v = stream.next_gaussian() * spec.blob_separation;
      auto fill_blobs = [&](Dataset<T>& ds, size_t n) {
        ds.n_samples = n;
        ds.n_features = f;
        ds.features.resize(n * f);
        ds.labels.resize(n);
        for (size_t k = 0; k < n; ++k) {
          const size_t y = stream.uniform_index(static_cast<uint32_t>(c));
          ds.labels[k] = static_cast<T>(y);
          for (size_t i = 0; i < f; ++i) {
            ds.features[k * f + i] =
                static_cast<T>(means[y * f + i] + stream.next_gaussian());
          }
        }
      };
      fill_blobs(task.train, spec.samples);
      fill_blobs(task.heldout, spec.heldout_samples);
      break;
    }
  }

  // "spread" remainder policy: the first (samples mod n) shards get one
  // extra sample; shards are contiguous index ranges.
  const size_t base = spec.samples / n_clients;
  const size_t rem = spec.samples % n_clients;
  task.shards.resize(n_clients);
  size_t next = 0;
  for (size_t i = 0; i < n_clients; ++i) {
    const size_t len = base + (i < rem ? 1 : 0);
    task.shards[i].resize(len);
    for (size_t k = 0; k < len; ++k) task.shards[i][k] = next++;
  }
  return task;
}

}  // namespace seedflood
