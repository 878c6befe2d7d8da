#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cgate/features.hpp"

namespace cgate::hybrid {

struct HybridConfig {
  std::uint32_t vocab_buckets = 1u << 15;
  int embed_dim = 32;
  int tabular_hidden = 32;
  int head_hidden = 32;
  int epochs = 8;
  int batch_size = 128;
  double step_size = 3e-3;
  std::uint64_t seed = 0;

  void validate() const;
  Json to_json() const;
  static HybridConfig from_json(const Json& doc);
};

// Lowercased alphanumeric runs, FNV-1a hashed and masked to the bucket count.
std::vector<std::uint32_t> tokenize_context(std::string_view text, std::uint32_t vocab_buckets);

struct Example {
  std::vector<std::uint32_t> tokens;  // sorted, duplicates kept
  std::vector<double> tabular;
  int label = 0;
};

// Offsets of each parameter group inside the flat parameter vector.
struct Layout {
  std::size_t embed, w1, b1, w2, b2, w3, b3, w4, b4, total;
  std::size_t input_dim;
  int e, h, k;
};

struct HybridModel {
  static constexpr std::string_view kFormat = "cgate-hybrid/1";

  HybridConfig config;
  std::size_t input_dim = 0;
  std::vector<double> params;
  std::optional<EncoderState> encoder;
  std::string schema_hash;
  View view = View::kFilter;
  std::string task;
  std::vector<std::string> feature_names;

  Layout layout() const;
  // Tokens must be sorted (make_tokens does that).
  double predict(std::span<const std::uint32_t> tokens, std::span<const double> tabular) const;

  Json to_json() const;
  static HybridModel from_json(const Json& doc, const std::string& expected_schema_hash = {});
};

std::vector<std::uint32_t> make_tokens(std::string_view text, std::uint32_t vocab_buckets);

// Random hidden layers, zero output weights, output bias logit(prior).
HybridModel init_model(const HybridConfig& config, std::size_t input_dim, double prior);

// Mean logistic loss over the batch; fills grad (same layout as params) when non-null.
double loss_and_grad(const HybridModel& model, std::span<const Example> batch,
                     std::vector<double>* grad);

struct TrainReport {
  std::vector<double> train_loss;      // per epoch, mean over minibatches
  std::vector<double> validation_auc;  // per epoch, empty without validation data
};

HybridModel train(std::span<const Example> train_set, std::span<const Example> validation,
                  std::size_t input_dim, const HybridConfig& config, TrainReport* report = nullptr);

double predict_hybrid(const HybridModel& model, std::string_view context, std::span<const double> tabular);

void save(const HybridModel& model, const std::filesystem::path& path);
HybridModel load(const std::filesystem::path& path, const std::string& expected_schema_hash = {});

}  // namespace cgate::hybrid
