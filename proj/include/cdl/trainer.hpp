#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdl/errors.hpp"
#include "cdl/network.hpp"
#include "cdl/rng.hpp"

namespace cdl {

inline NetworkParams init_network(const std::vector<int>& layer_dims, Activation act,
                                  const TrainConfig& cfg) {
  if (layer_dims.size() < 2) throw ValidationError("network needs input and output dims");
  for (int d : layer_dims)
    if (d < 1) throw ValidationError("layer widths must be positive");
  NetworkParams params;
  params.activation = act;
  Rng rng(cfg.rng_seed);
  for (std::size_t m = 1; m < layer_dims.size(); ++m) {
    const int rows = layer_dims[m];
    const int cols = layer_dims[m - 1];
    const double scale =
        cfg.init_scale > 0 ? cfg.init_scale : 1.0 / std::sqrt(static_cast<double>(cols));
    Matrix W(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) W(i, j) = rng.uniform(-scale, scale);
    Vector b(rows);
    for (int i = 0; i < rows; ++i) b(i) = rng.uniform(-scale, scale);
    params.W.push_back(std::move(W));
    params.b.push_back(std::move(b));
  }
  return params;
}

struct TrainResult {
  NetworkParams params;
  std::vector<double> history;  // cost after each update
  bool converged = false;       // |C_k - C_{k-1}| < eps (vs. iteration cap)
  double initial_cost = 0.0;    // cost at the initial parameters
};

// Full-batch training: forward, MI + MMD, backward, ascend, decay the rate,
// stop on |C_k - C_{k-1}| < eps or the iteration cap.
inline TrainResult train_network(const FeatureBatch& batch, NetworkParams params,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (batch.n() < 2) throw ValidationError("training needs at least 2 pairs");
  TrainResult result;
  double rate = cfg.learning_rate;

  ForwardCache cache = forward(params, batch);
  double prev_cost = cost(params, cache, cfg);
  result.initial_cost = prev_cost;

  for (int k = 1; k <= cfg.max_iters; ++k) {
    const Gradients grads = backward(params, cache, cfg);
    for (int m = 0; m < params.num_layers(); ++m) {
      params.W[m] += rate * grads.dW[m];
      params.b[m] += rate * grads.db[m];
    }
    rate *= cfg.decay;

    cache = forward(params, batch);
    const double c_k = cost(params, cache, cfg);
    if (!std::isfinite(c_k))
      throw DivergenceError(k, result.history,
                            "training diverged (non-finite cost) at iteration " +
                                std::to_string(k));
    result.history.push_back(c_k);
    if (std::abs(c_k - prev_cost) < cfg.eps) {
      result.converged = true;
      break;
    }
    prev_cost = c_k;
  }
  result.params = std::move(params);
  return result;
}

inline TrainResult train_network(const FeatureBatch& batch, const std::vector<int>& arch,
                                 Activation act, const TrainConfig& cfg) {
  return train_network(batch, init_network(arch, act, cfg), cfg);
}

// ---------------------------------------------------------------------------
// Model file: versioned JSON document.
// ---------------------------------------------------------------------------

constexpr int kModelVersion = 1;

// provenance must stay path-free so reruns from different directories emit
// byte-identical model files
inline void save_model(const std::string& path, const NetworkParams& params,
                       const TrainConfig& cfg, const std::string& provenance) {
  params.validate();
  nlohmann::ordered_json j;
  j["version"] = kModelVersion;
  j["activation"] = activation_name(params.activation);
  j["dims"] = params.layer_dims();
  nlohmann::ordered_json weights = nlohmann::ordered_json::array();
  nlohmann::ordered_json biases = nlohmann::ordered_json::array();
  for (int m = 0; m < params.num_layers(); ++m) {
    std::vector<double> w_flat;  // row-major
    w_flat.reserve(static_cast<std::size_t>(params.W[m].size()));
    for (int i = 0; i < params.W[m].rows(); ++i)
      for (int c = 0; c < params.W[m].cols(); ++c) w_flat.push_back(params.W[m](i, c));
    weights.push_back(w_flat);
    biases.push_back(std::vector<double>(params.b[m].data(),
                                         params.b[m].data() + params.b[m].size()));
  }
  j["weights"] = std::move(weights);
  j["biases"] = std::move(biases);
  j["train_config"] = {{"alpha", cfg.alpha},
                       {"beta", cfg.beta},
                       {"learning_rate", cfg.learning_rate},
                       {"decay", cfg.decay},
                       {"eps", cfg.eps},
                       {"max_iters", cfg.max_iters},
                       {"rng_seed", cfg.rng_seed},
                       {"init_scale", cfg.init_scale}};
  j["data_provenance"] = provenance;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

struct LoadedModel {
  NetworkParams params;
  TrainConfig train_config;
  std::string provenance;
};

inline LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("model file is not valid JSON: " + path + " (" + e.what() + ")");
  }
  try {
    if (j.at("version").get<int>() != kModelVersion)
      throw ValidationError("unsupported model version in " + path);
    LoadedModel model;
    model.params.activation = activation_from_name(j.at("activation").get<std::string>());
    const auto dims = j.at("dims").get<std::vector<int>>();
    if (dims.size() < 2) throw ValidationError("model dims chain too short in " + path);
    const auto weights = j.at("weights");
    const auto biases = j.at("biases");
    if (weights.size() != dims.size() - 1 || biases.size() != dims.size() - 1)
      throw ValidationError("model layer count does not match dims chain in " + path);
    for (std::size_t m = 0; m + 1 < dims.size(); ++m) {
      const int rows = dims[m + 1];
      const int cols = dims[m];
      const auto w_flat = weights[m].get<std::vector<double>>();
      const auto b_vals = biases[m].get<std::vector<double>>();
      if (static_cast<int>(w_flat.size()) != rows * cols ||
          static_cast<int>(b_vals.size()) != rows)
        throw ValidationError("model weight shape does not match dims chain in " + path);
      Matrix W(rows, cols);
      for (int i = 0; i < rows; ++i)
        for (int c = 0; c < cols; ++c) W(i, c) = w_flat[static_cast<std::size_t>(i) * cols + c];
      model.params.W.push_back(std::move(W));
      model.params.b.push_back(
          Eigen::Map<const Vector>(b_vals.data(), static_cast<int>(b_vals.size())));
    }
    const auto& tc = j.at("train_config");
    model.train_config.alpha = tc.at("alpha").get<double>();
    model.train_config.beta = tc.at("beta").get<double>();
    model.train_config.learning_rate = tc.at("learning_rate").get<double>();
    model.train_config.decay = tc.at("decay").get<double>();
    model.train_config.eps = tc.at("eps").get<double>();
    model.train_config.max_iters = tc.at("max_iters").get<int>();
    model.train_config.rng_seed = tc.at("rng_seed").get<std::uint64_t>();
    model.train_config.init_scale = tc.at("init_scale").get<double>();
    if (j.contains("data_provenance"))
      model.provenance = j.at("data_provenance").get<std::string>();
    model.params.validate();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("model file schema error in " + path + ": " + e.what());
  }
}

}  // namespace cdl
