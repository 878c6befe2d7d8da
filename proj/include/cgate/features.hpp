#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cgate/events.hpp"
#include "cgate/schema.hpp"

namespace cgate {

// How missing values are rendered in dense vectors. GBDT keeps an explicit
// marker (NaN) and learns a default branch; the MLP path sees the quantile
// midpoint instead.
enum class Imputation { kMissingMarker, kMidpoint };

inline constexpr double kMissing = kNaN;
inline constexpr int kQuantileCuts = 64;
inline constexpr double kDefaultSmoothing = 10.0;
inline constexpr int kDefaultFolds = 5;

struct EncoderState {
  static constexpr std::string_view kFormat = "cgate-encoder/1";

  std::string schema_hash;
  View view = View::kFilter;
  int folds = kDefaultFolds;
  std::uint64_t fold_seed = 0;
  double smoothing = kDefaultSmoothing;
  double prior = 0.5;
  SplitTag fitted_on = SplitTag::kTrain;
  // Deployment statistics over all training rows: category -> encoded value.
  std::map<std::string, std::map<std::string, double>> categorical;
  // Strictly increasing cut points per scalar.
  std::map<std::string, std::vector<double>> quantiles;

  double encode_category(const std::string& feature, const std::string& value) const;

  Json to_json() const;
  static EncoderState from_json(const Json& doc);
  bool operator==(const EncoderState&) const = default;
};

struct EncoderFit {
  EncoderState state;
  // Out-of-fold categorical encodings: out_of_fold[record][k] for the k-th
  // categorical entry of the view (NaN when the record's value is missing).
  std::vector<std::vector<double>> out_of_fold;
  std::vector<int> fold_of;  // fold index per record
};

// Refuses test-tagged input (ErrorCode::kLeakage).
EncoderFit fit_encoder(std::span<const FeatureBag* const> records, std::span<const Label> labels,
                       const FeatureSchema& schema, View view, SplitTag split,
                       int folds = kDefaultFolds, std::uint64_t seed = 0,
                       double smoothing = kDefaultSmoothing);

double quantile_map(std::span<const double> cuts, double x);

// Dense vector of schema.view_size(view) entries.
std::vector<double> transform(const FeatureBag& bag, const EncoderState& state,
                              const FeatureSchema& schema, View view, Imputation imputation);
void transform_into(const FeatureBag& bag, const EncoderState& state, const FeatureSchema& schema,
                    View view, Imputation imputation, std::span<double> out);

// Row-major matrix over fitted records, substituting out-of-fold encodings
// for categoricals.
std::vector<double> transform_training(std::span<const FeatureBag* const> records,
                                       const EncoderFit& fit, const FeatureSchema& schema,
                                       View view, Imputation imputation);

std::vector<std::string> view_names(const FeatureSchema& schema, View view);

}  // namespace cgate
