#include "seedflood/config.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "seedflood/errors.hpp"

namespace seedflood {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& prefix) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) {
      throw ConfigError(prefix + key + ": unknown key");
    }
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback,
         const std::string& prefix) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(prefix + key + ": type mismatch");
  }
}

TaskSpec parse_task(const json& node, const std::string& prefix) {
  json j = node;
  if (j.is_string()) j = json{{"kind", node.get<std::string>()}};
  if (!j.is_object()) throw ConfigError(prefix + ": expected object or string");
  reject_unknown_keys(j,
                      {"kind", "samples", "features", "heldout_samples",
                       "label_noise", "noise_std", "teacher_scale", "hidden",
                       "classes", "blob_separation"},
                      prefix + ".");
  TaskSpec spec;
  const auto kind = get_or<std::string>(j, "kind", "logistic", prefix + ".");
  if (kind == "logistic") {
    spec.kind = TaskKind::Logistic;
  } else if (kind == "least-squares") {
    spec.kind = TaskKind::LeastSquares;
  } else if (kind == "tiny-mlp") {
    spec.kind = TaskKind::TinyMlp;
  } else {
    throw ConfigError(prefix + ".kind: unknown task kind '" + kind + "'");
  }
  spec.samples = get_or<size_t>(j, "samples", spec.samples, prefix + ".");
  spec.features = get_or<size_t>(j, "features", spec.features, prefix + ".");
  spec.heldout_samples =
      get_or<size_t>(j, "heldout_samples", spec.heldout_samples, prefix + ".");
  spec.label_noise =
      get_or<double>(j, "label_noise", spec.label_noise, prefix + ".");
  spec.noise_std = get_or<double>(j, "noise_std", spec.noise_std, prefix + ".");
  spec.teacher_scale =
      get_or<double>(j, "teacher_scale", spec.teacher_scale, prefix + ".");
  spec.hidden = get_or<size_t>(j, "hidden", spec.hidden, prefix + ".");
  spec.classes = get_or<size_t>(j, "classes", spec.classes, prefix + ".");
  spec.blob_separation =
      get_or<double>(j, "blob_separation", spec.blob_separation, prefix + ".");
  if (spec.samples < 1) throw ConfigError(prefix + ".samples: must be >= 1");
  if (spec.features < 1) throw ConfigError(prefix + ".features: must be >= 1");
  return spec;
}

TopologySpec parse_topology(const json& node, const std::string& prefix) {
  json j = node;
  if (j.is_string()) j = json{{"kind", node.get<std::string>()}};
  if (!j.is_object()) throw ConfigError(prefix + ": expected object or string");
  reject_unknown_keys(
      j, {"kind", "rows", "cols", "extra_edges", "graph_seed", "path", "edges"},
      prefix + ".");
  TopologySpec spec;
  spec.kind = get_or<std::string>(j, "kind", "ring", prefix + ".");
  spec.rows = get_or<size_t>(j, "rows", 0, prefix + ".");
  spec.cols = get_or<size_t>(j, "cols", 0, prefix + ".");
  spec.extra_edges = get_or<size_t>(j, "extra_edges", 0, prefix + ".");
  spec.graph_seed = get_or<uint64_t>(j, "graph_seed", 0, prefix + ".");
  spec.path = get_or<std::string>(j, "path", "", prefix + ".");
  if (j.contains("edges")) {
    try {
      for (const auto& e : j.at("edges")) {
        spec.edges.emplace_back(e.at(0).get<size_t>(), e.at(1).get<size_t>());
      }
    } catch (const json::exception&) {
      throw ConfigError(prefix + ".edges: expected [[u,v],...]");
    }
  }
  const std::set<std::string> kinds{"ring",   "meshgrid", "path",  "star",
                                    "random", "custom",   "file"};
  if (!kinds.contains(spec.kind)) {
    throw ConfigError(prefix + ".kind: unknown topology kind '" + spec.kind +
                      "'");
  }
  return spec;
}

}  // namespace

RunConfig parse_run_config(const json& j, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError(prefix + ": expected object");
  reject_unknown_keys(
      j,
      {"method", "n", "topology", "T", "task", "lr", "epsilon", "rank", "tau",
       "hops", "local_steps", "batch_size", "eval_every", "seed",
       "sender_exclusion", "keep_fraction", "gamma"},
      prefix + ".");
  for (const char* required : {"method", "n", "topology", "T", "task"}) {
    if (!j.contains(required)) {
      throw ConfigError(prefix + "." + required + ": missing required key");
    }
  }

  RunConfig cfg;
  cfg.method = method_from_name(
      get_or<std::string>(j, "method", "seedflood", prefix + "."));
  cfg.n = get_or<size_t>(j, "n", cfg.n, prefix + ".");
  cfg.topology = parse_topology(j.at("topology"), prefix + ".topology");
  cfg.iterations = get_or<uint64_t>(j, "T", cfg.iterations, prefix + ".");
  cfg.task = parse_task(j.at("task"), prefix + ".task");
  cfg.lr = get_or<double>(j, "lr", cfg.lr, prefix + ".");
  cfg.epsilon = get_or<double>(j, "epsilon", cfg.epsilon, prefix + ".");
  cfg.rank = get_or<uint32_t>(j, "rank", cfg.rank, prefix + ".");
  cfg.tau = get_or<uint64_t>(j, "tau", cfg.tau, prefix + ".");
  cfg.hops = get_or<int64_t>(j, "hops", cfg.hops, prefix + ".");
  cfg.local_steps =
      get_or<size_t>(j, "local_steps", cfg.local_steps, prefix + ".");
  cfg.batch_size =
      get_or<size_t>(j, "batch_size", cfg.batch_size, prefix + ".");
  cfg.eval_every =
      get_or<uint64_t>(j, "eval_every", cfg.eval_every, prefix + ".");
  cfg.seed = Seed{get_or<uint64_t>(j, "seed", cfg.seed.value, prefix + ".")};
  cfg.sender_exclusion = get_or<bool>(j, "sender_exclusion",
                                      cfg.sender_exclusion, prefix + ".");
  cfg.keep_fraction =
      get_or<double>(j, "keep_fraction", cfg.keep_fraction, prefix + ".");
  cfg.gamma = get_or<double>(j, "gamma", cfg.gamma, prefix + ".");

  if (cfg.n < 1) throw ConfigError(prefix + ".n: must be >= 1");
  if (cfg.iterations < 1) throw ConfigError(prefix + ".T: must be >= 1");
  if (cfg.rank < 1) throw ConfigError(prefix + ".rank: must be >= 1");
  if (cfg.tau < 1) throw ConfigError(prefix + ".tau: must be >= 1");
  if (cfg.tau > cfg.iterations) {
    // Constant subspace for the whole run is still expressible as tau = T.
    throw ConfigError(prefix + ".tau: must be <= T (tau=" +
                      std::to_string(cfg.tau) + ", T=" +
                      std::to_string(cfg.iterations) + ")");
  }
  if (!(cfg.epsilon > 0.0)) {
    throw ConfigError(prefix + ".epsilon: must be > 0");
  }
  if (cfg.batch_size < 1) {
    throw ConfigError(prefix + ".batch_size: must be >= 1");
  }
  if (cfg.local_steps < 1) {
    throw ConfigError(prefix + ".local_steps: must be >= 1");
  }
  if (!(cfg.keep_fraction > 0.0) || cfg.keep_fraction > 1.0) {
    throw ConfigError(prefix + ".keep_fraction: must be in (0, 1]");
  }
  if (cfg.task.samples < cfg.n) {
    throw ConfigError(prefix + ".task.samples: fewer samples than clients");
  }
  return cfg;
}

void validate_run_config(const RunConfig& config) {
  const auto topo = build_topology_from_spec(config.topology, config.n);
  if (config.method == Method::SeedFlood) {
    if (config.hops >= 0 && static_cast<size_t>(config.hops) > topo.diameter) {
      throw ConfigError("hops: k=" + std::to_string(config.hops) +
                        " exceeds topology diameter D=" +
                        std::to_string(topo.diameter));
    }
    const auto shapes = task_layer_shapes(config.task);
    for (const auto& s : shapes) {
      if (s.is_matrix() && (config.rank > s.rows || config.rank > s.cols)) {
        throw ConfigError("rank: r=" + std::to_string(config.rank) +
                          " exceeds a layer dimension (" +
                          std::to_string(s.rows) + "x" +
                          std::to_string(s.cols) + ")");
      }
    }
  }
}

namespace {

json topology_to_json(const TopologySpec& spec) {
  json j{{"kind", spec.kind}};
  if (spec.rows) j["rows"] = spec.rows;
  if (spec.cols) j["cols"] = spec.cols;
  if (spec.extra_edges) j["extra_edges"] = spec.extra_edges;
  if (spec.graph_seed) j["graph_seed"] = spec.graph_seed;
  if (!spec.path.empty()) j["path"] = spec.path;
  if (!spec.edges.empty()) {
    json edges = json::array();
    for (const auto& [u, v] : spec.edges) edges.push_back({u, v});
    j["edges"] = edges;
  }
  return j;
}

json task_to_json(const TaskSpec& spec) {
  const char* kind = spec.kind == TaskKind::Logistic ? "logistic"
                     : spec.kind == TaskKind::LeastSquares ? "least-squares"
                                                           : "tiny-mlp";
  json j{{"kind", kind},
         {"samples", spec.samples},
         {"features", spec.features},
         {"heldout_samples", spec.heldout_samples}};
  switch (spec.kind) {
    case TaskKind::Logistic:
      j["label_noise"] = spec.label_noise;
      j["teacher_scale"] = spec.teacher_scale;
      break;
    case TaskKind::LeastSquares:
      j["noise_std"] = spec.noise_std;
      break;
    case TaskKind::TinyMlp:
      j["hidden"] = spec.hidden;
      j["classes"] = spec.classes;
      j["blob_separation"] = spec.blob_separation;
      break;
  }
  return j;
}

}  // namespace

json run_config_to_json(const RunConfig& config) {
  return json{{"method", method_name(config.method)},
              {"n", config.n},
              {"topology", topology_to_json(config.topology)},
              {"T", config.iterations},
              {"task", task_to_json(config.task)},
              {"lr", config.lr},
              {"epsilon", config.epsilon},
              {"rank", config.rank},
              {"tau", config.tau},
              {"hops", config.hops},
              {"local_steps", config.local_steps},
              {"batch_size", config.batch_size},
              {"eval_every", config.eval_every},
              {"seed", config.seed.value},
              {"sender_exclusion", config.sender_exclusion},
              {"keep_fraction", config.keep_fraction},
              {"gamma", config.gamma}};
}

ExperimentSpec parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("parse error: ") + e.what());
  }

  ExperimentSpec spec;
  if (root.is_object() && root.contains("out")) {
    spec.out_dir = root.at("out").get<std::string>();
  }

  auto make_name = [](size_t idx, const RunConfig& cfg) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "run%03zu", idx);
    return std::string(buf) + "-" + method_name(cfg.method) + "-" +
           cfg.topology.kind + "-n" + std::to_string(cfg.n) + "-seed" +
           std::to_string(cfg.seed.value);
  };

  if (root.is_object() && (root.contains("base") || root.contains("runs"))) {
    reject_unknown_keys(root, {"out", "base", "sweep", "seeds", "runs"},
                        "config.");
    std::vector<json> variant_jsons;
    if (root.contains("runs")) {
      if (root.contains("base") || root.contains("sweep")) {
        throw ConfigError("config.runs: cannot combine with base/sweep");
      }
      for (const auto& r : root.at("runs")) variant_jsons.push_back(r);
    } else {
      variant_jsons.push_back(root.at("base"));
      if (root.contains("sweep")) {
        const auto& sweep = root.at("sweep");
        if (!sweep.is_object()) {
          throw ConfigError("config.sweep: expected object of arrays");
        }
        for (const auto& [key, values] : sweep.items()) {
          if (!values.is_array() || values.empty()) {
            throw ConfigError("config.sweep." + key +
                              ": expected non-empty array");
          }
          std::vector<json> expanded;
          for (const auto& base : variant_jsons) {
            for (const auto& v : values) {
              json next = base;
              next[key] = v;
              expanded.push_back(std::move(next));
            }
          }
          variant_jsons = std::move(expanded);
        }
      }
    }
    std::vector<uint64_t> seeds;
    if (root.contains("seeds")) {
      for (const auto& s : root.at("seeds")) seeds.push_back(s.get<uint64_t>());
      if (seeds.empty()) throw ConfigError("config.seeds: must be non-empty");
    }
    size_t idx = 0;
    for (const auto& vj : variant_jsons) {
      if (seeds.empty()) {
        auto cfg = parse_run_config(vj, "config");
        spec.variants.emplace_back(make_name(idx++, cfg), std::move(cfg));
      } else {
        for (uint64_t s : seeds) {
          json with_seed = vj;
          with_seed["seed"] = s;
          auto cfg = parse_run_config(with_seed, "config");
          spec.variants.emplace_back(make_name(idx++, cfg), std::move(cfg));
        }
      }
    }
  } else {
    auto cfg = parse_run_config(root, "config");
    spec.variants.emplace_back(make_name(0, cfg), std::move(cfg));
  }

  for (const auto& [name, cfg] : spec.variants) {
    try {
      validate_run_config(cfg);
    } catch (const std::exception& e) {
      throw ConfigError(name + ": " + e.what());
    }
  }
  return spec;
}

std::string metrics_csv(const RunResult& result) {
  std::ostringstream out;
  out << "iteration,global_loss,loss_spread,consensus_error,heldout_loss,"
         "heldout_accuracy,bytes_total,messages_total,ge_madds,ma_madds\n";
  for (const auto& r : result.metrics) {
    out << r.iteration << ',' << fmt_double(r.global_loss) << ','
        << fmt_double(r.loss_spread) << ',' << fmt_double(r.consensus_error)
        << ',' << fmt_double(r.heldout_loss) << ','
        << fmt_double(r.heldout_accuracy) << ',' << r.bytes_total << ','
        << r.messages_total << ',' << r.ge_madds << ',' << r.ma_madds << '\n';
  }
  return out.str();
}

json run_summary_json(const std::string& name, const RunConfig& config,
                      const RunResult& result) {
  return json{{"name", name},
              {"method", method_name(config.method)},
              {"n", config.n},
              {"topology", config.topology.kind},
              {"T", config.iterations},
              {"seed", config.seed.value},
              {"diameter", result.diameter},
              {"hops", result.hops_used},
              {"final_loss", result.final_loss},
              {"gmp_loss", result.final_heldout_loss},
              {"gmp_accuracy", result.final_heldout_accuracy},
              {"best_heldout_loss", result.best_heldout_loss},
              {"best_heldout_iteration", result.best_heldout_iteration},
              {"total_bytes", result.ledger.total_bytes()},
              {"total_messages", result.ledger.total_messages()},
              {"max_edge_bytes", result.ledger.max_edge_bytes()},
              {"ge_madds", result.counters.ge_madds},
              {"ma_madds", result.counters.ma_total()}};
}

int execute(const ExperimentSpec& spec, const std::string& out_dir,
            size_t jobs) {
  namespace fs = std::filesystem;
  std::string dir = out_dir.empty() ? spec.out_dir : out_dir;
  if (const char* env = std::getenv("SEEDFLOOD_OUT")) {
    if (out_dir.empty()) dir = env;
  }
  fs::create_directories(dir);

  struct Outcome {
    bool ok = false;
    std::string error;
    json summary;
  };
  std::vector<Outcome> outcomes(spec.variants.size());

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const size_t idx = next.fetch_add(1);
      if (idx >= spec.variants.size()) return;
      const auto& [name, cfg] = spec.variants[idx];
      auto& out = outcomes[idx];
      try {
        RunResult result = run(cfg);
        std::ofstream metrics(fs::path(dir) / (name + ".metrics.csv"));
        metrics << metrics_csv(result);
        std::ofstream ledger(fs::path(dir) / (name + ".ledger.csv"));
        ledger << result.ledger.to_csv();
        out.summary = run_summary_json(name, cfg, result);
        out.ok = true;
      } catch (const std::exception& e) {
        out.error = e.what();
      }
    }
  };

  const size_t n_workers =
      std::max<size_t>(1, std::min(jobs, spec.variants.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  json manifest = json::array();
  json summaries = json::array();
  bool all_ok = true;
  uint64_t total_bytes = 0, total_messages = 0;
  for (size_t i = 0; i < spec.variants.size(); ++i) {
    const auto& [name, cfg] = spec.variants[i];
    json entry{{"name", name},
               {"status", outcomes[i].ok ? "ok" : "error"},
               {"config", run_config_to_json(cfg)}};
    if (outcomes[i].ok) {
      entry["files"] = {name + ".metrics.csv", name + ".ledger.csv"};
      summaries.push_back(outcomes[i].summary);
      total_bytes += outcomes[i].summary.at("total_bytes").get<uint64_t>();
      total_messages +=
          outcomes[i].summary.at("total_messages").get<uint64_t>();
    } else {
      entry["error"] = outcomes[i].error;
      all_ok = false;
    }
    manifest.push_back(entry);
  }

  json summary{{"variants", summaries},
               {"totals",
                {{"total_bytes", total_bytes},
                 {"total_messages", total_messages},
                 {"completed", summaries.size()},
                 {"failed", spec.variants.size() - summaries.size()}}}};
  {
    std::ofstream f(fs::path(dir) / "summary.json");
    f << summary.dump(2) << '\n';
  }
  {
    std::ofstream f(fs::path(dir) / "manifest.json");
    f << manifest.dump(2) << '\n';
  }
  return all_ok ? 0 : 1;
}

}  // namespace seedflood
