#include "cgate/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cgate/error.hpp"
#include "cgate/rng.hpp"

namespace cgate {

double EncoderState::encode_category(const std::string& feature, const std::string& value) const {
  auto f = categorical.find(feature);
  if (f == categorical.end()) return prior;
  auto v = f->second.find(value);
  return v == f->second.end() ? prior : v->second;
}

Json EncoderState::to_json() const {
  return {{"format", kFormat},       {"schema_hash", schema_hash}, {"view", to_string(view)},
          {"folds", folds},          {"fold_seed", fold_seed},     {"smoothing", smoothing},
          {"prior", prior},          {"split", to_string(fitted_on)},
          {"categorical", categorical}, {"quantiles", quantiles}};
}

EncoderState EncoderState::from_json(const Json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kFormat) {
      fail(ErrorCode::kVersion, "unsupported encoder format: " + doc.at("format").dump());
    }
    EncoderState s;
    s.schema_hash = doc.at("schema_hash").get<std::string>();
    s.view = view_from_string(doc.at("view").get<std::string>());
    s.folds = doc.at("folds").get<int>();
    s.fold_seed = doc.at("fold_seed").get<std::uint64_t>();
    s.smoothing = doc.at("smoothing").get<double>();
    s.prior = doc.at("prior").get<double>();
    s.fitted_on = split_from_string(doc.at("split").get<std::string>());
    s.categorical = doc.at("categorical").get<decltype(s.categorical)>();
    s.quantiles = doc.at("quantiles").get<decltype(s.quantiles)>();
    for (const auto& [name, cuts] : s.quantiles) {
      for (std::size_t i = 1; i < cuts.size(); ++i) {
        if (!(cuts[i - 1] < cuts[i])) fail(ErrorCode::kParse, "quantile grid not increasing: " + name);
      }
    }
    return s;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed encoder: ") + e.what());
  }
}

std::vector<std::string> view_names(const FeatureSchema& schema, View view) {
  std::vector<std::string> names;
  const auto n = schema.view_size(view);
  for (std::size_t i = 0; i < n; ++i) names.push_back(schema.entries()[i].name);
  return names;
}

namespace {

std::vector<double> quantile_grid(std::vector<double> values) {
  std::vector<double> cuts;
  if (values.empty()) return cuts;
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  for (int j = 0; j < kQuantileCuts; ++j) {
    const auto pos = static_cast<std::size_t>(
        std::llround(static_cast<double>(j) * static_cast<double>(n - 1) / (kQuantileCuts - 1)));
    const double v = values[pos];
    if (cuts.empty() || v > cuts.back()) cuts.push_back(v);
  }
  return cuts;
}

}  // namespace

EncoderFit fit_encoder(std::span<const FeatureBag* const> records, std::span<const Label> labels,
                       const FeatureSchema& schema, View view, SplitTag split, int folds,
                       std::uint64_t seed, double smoothing) {
  if (split == SplitTag::kTest) {
    fail(ErrorCode::kLeakage, "refusing to fit the encoder on test-split data");
  }
  if (records.size() != labels.size()) fail(ErrorCode::kDimension, "records/labels size mismatch");
  if (folds < 2) fail(ErrorCode::kConfig, "folds must be >= 2");
  if (records.size() < static_cast<std::size_t>(folds)) {
    fail(ErrorCode::kConfig, "need at least one record per fold");
  }
  const std::size_t n = records.size();
  EncoderFit fit;
  EncoderState& st = fit.state;
  st.schema_hash = schema.hash();
  st.view = view;
  st.folds = folds;
  st.fold_seed = seed;
  st.smoothing = smoothing;
  st.fitted_on = split;

  double positives = 0;
  for (auto l : labels) positives += l == Label::kPositive;
  st.prior = positives / static_cast<double>(n);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  fit.fold_of.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) fit.fold_of[perm[i]] = static_cast<int>(i % folds);

  const std::size_t width = schema.view_size(view);
  std::size_t categorical_count = 0;
  for (std::size_t k = 0; k < width; ++k) {
    categorical_count += schema.entries()[k].kind == FeatureKind::kCategorical;
  }
  fit.out_of_fold.assign(n, std::vector<double>(categorical_count, kMissing));

  std::size_t cat_index = 0;
  for (std::size_t k = 0; k < width; ++k) {
    const auto& entry = schema.entries()[k];
    if (entry.kind == FeatureKind::kScalar) {
      std::vector<double> values;
      values.reserve(n);
      for (const auto* bag : records) {
        auto it = bag->scalars.find(entry.name);
        if (it != bag->scalars.end() && it->second && std::isfinite(*it->second)) {
          values.push_back(*it->second);
        }
      }
      st.quantiles[entry.name] = quantile_grid(std::move(values));
    } else if (entry.kind == FeatureKind::kCategorical) {
      struct Counts {
        double total = 0, positive = 0;
        std::vector<double> fold_total, fold_positive;
      };
      std::map<std::string, Counts> counts;
      std::vector<const std::string*> value_of(n, nullptr);
      for (std::size_t i = 0; i < n; ++i) {
        auto it = records[i]->categoricals.find(entry.name);
        if (it == records[i]->categoricals.end() || !it->second) continue;
        value_of[i] = &*it->second;
        auto& c = counts[*it->second];
        if (c.fold_total.empty()) {
          c.fold_total.assign(folds, 0.0);
          c.fold_positive.assign(folds, 0.0);
        }
        const double y = labels[i] == Label::kPositive ? 1.0 : 0.0;
        c.total += 1;
        c.positive += y;
        c.fold_total[fit.fold_of[i]] += 1;
        c.fold_positive[fit.fold_of[i]] += y;
      }
      auto& encoded = st.categorical[entry.name];
      for (const auto& [value, c] : counts) {
        encoded[value] = (c.positive + st.prior * smoothing) / (c.total + smoothing);
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (!value_of[i]) continue;
        const auto& c = counts.at(*value_of[i]);
        const int f = fit.fold_of[i];
        fit.out_of_fold[i][cat_index] = (c.positive - c.fold_positive[f] + st.prior * smoothing) /
                                        (c.total - c.fold_total[f] + smoothing);
      }
      ++cat_index;
    }
  }
  return fit;
}

double quantile_map(std::span<const double> cuts, double x) {
  const std::size_t k = cuts.size();
  if (k == 0) return 0.5;
  if (k == 1) return x < cuts[0] ? 0.0 : (x > cuts[0] ? 1.0 : 0.5);
  if (x <= cuts[0]) return 0.0;
  if (x >= cuts[k - 1]) return 1.0;
  const auto it = std::upper_bound(cuts.begin(), cuts.end(), x);
  const auto i = static_cast<std::size_t>(it - cuts.begin()) - 1;
  const double frac = (x - cuts[i]) / (cuts[i + 1] - cuts[i]);
  return (static_cast<double>(i) + frac) / static_cast<double>(k - 1);
}

void transform_into(const FeatureBag& bag, const EncoderState& state, const FeatureSchema& schema,
                    View view, Imputation imputation, std::span<double> out) {
  if (state.schema_hash != schema.hash()) {
    fail(ErrorCode::kSchemaMismatch, "encoder schema_hash does not match the dataset schema");
  }
  const std::size_t width = schema.view_size(view);
  if (out.size() != width) fail(ErrorCode::kDimension, "output span has the wrong width");
  if (view == View::kFilter && state.view == View::kTrigger) {
    fail(ErrorCode::kSchemaMismatch, "encoder fitted on the trigger view cannot encode filter view");
  }
  const double missing = imputation == Imputation::kMissingMarker ? kMissing : 0.5;
  for (std::size_t k = 0; k < width; ++k) {
    const auto& entry = schema.entries()[k];
    double value = missing;
    switch (entry.kind) {
      case FeatureKind::kScalar: {
        auto it = bag.scalars.find(entry.name);
        if (it != bag.scalars.end() && it->second && !std::isnan(*it->second)) {
          auto q = state.quantiles.find(entry.name);
          value = q == state.quantiles.end() ? 0.5 : quantile_map(q->second, *it->second);
        }
        break;
      }
      case FeatureKind::kCategorical: {
        auto it = bag.categoricals.find(entry.name);
        if (it != bag.categoricals.end() && it->second) {
          value = state.encode_category(entry.name, *it->second);
        }
        break;
      }
      case FeatureKind::kFlag: {
        auto it = bag.flags.find(entry.name);
        if (it != bag.flags.end() && it->second) value = *it->second ? 1.0 : 0.0;
        break;
      }
    }
    out[k] = value;
  }
}

std::vector<double> transform(const FeatureBag& bag, const EncoderState& state,
                              const FeatureSchema& schema, View view, Imputation imputation) {
  std::vector<double> out(schema.view_size(view));
  transform_into(bag, state, schema, view, imputation, out);
  return out;
}

std::vector<double> transform_training(std::span<const FeatureBag* const> records,
                                       const EncoderFit& fit, const FeatureSchema& schema,
                                       View view, Imputation imputation) {
  const std::size_t width = schema.view_size(view);
  std::vector<double> matrix(records.size() * width);
  const double missing = imputation == Imputation::kMissingMarker ? kMissing : 0.5;
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::span<double> row(matrix.data() + i * width, width);
    transform_into(*records[i], fit.state, schema, view, imputation, row);
    std::size_t cat_index = 0;
    for (std::size_t k = 0; k < width; ++k) {
      if (schema.entries()[k].kind != FeatureKind::kCategorical) continue;
      const double oof = fit.out_of_fold[i][cat_index++];
      row[k] = std::isnan(oof) ? missing : oof;
    }
  }
  return matrix;
}

}  // namespace cgate
