#include "cgate/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "cgate/error.hpp"
#include "cgate/log.hpp"

namespace cgate::gbdt {

void TrainConfig::validate() const {
  if (trees < 0) fail(ErrorCode::kConfig, "trees must be non-negative");
  if (max_depth < 1) fail(ErrorCode::kConfig, "max_depth must be positive");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    fail(ErrorCode::kConfig, "learning_rate must lie in (0, 1]");
  }
  if (bins < 2 || bins > 256) fail(ErrorCode::kConfig, "bins must lie in [2, 256]");
  if (!(min_child_weight > 0.0) || !(l2_leaf > 0.0) || !(positive_class_weight > 0.0)) {
    fail(ErrorCode::kConfig, "min_child_weight, l2_leaf and positive_class_weight must be positive");
  }
}

Json TrainConfig::to_json() const {
  return {{"trees", trees},
          {"max_depth", max_depth},
          {"learning_rate", learning_rate},
          {"bins", bins},
          {"min_child_weight", min_child_weight},
          {"l2_leaf", l2_leaf},
          {"positive_class_weight", positive_class_weight},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const Json& doc) {
  TrainConfig c;
  c.trees = doc.value("trees", c.trees);
  c.max_depth = doc.value("max_depth", c.max_depth);
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.bins = doc.value("bins", c.bins);
  c.min_child_weight = doc.value("min_child_weight", c.min_child_weight);
  c.l2_leaf = doc.value("l2_leaf", c.l2_leaf);
  c.positive_class_weight = doc.value("positive_class_weight", c.positive_class_weight);
  c.seed = doc.value("seed", c.seed);
  return c;
}

double Tree::predict(std::span<const double> x) const {
  int i = 0;
  while (nodes[i].feature >= 0) {
    const Node& n = nodes[i];
    const double v = x[static_cast<std::size_t>(n.feature)];
    const bool left = std::isnan(v) ? n.missing_left : v <= n.threshold;
    i = left ? n.left : n.right;
  }
  return nodes[i].value;
}

double Ensemble::raw_score(std::span<const double> x) const {
  double sum = base_score;
  for (const auto& tree : trees) sum += tree.predict(x);
  return sum;
}

double predict_proba(const Ensemble& model, std::span<const double> x) {
  if (x.size() != model.feature_count()) {
    fail(ErrorCode::kDimension, fmt::format("expected {} features, got {}", model.feature_count(), x.size()));
  }
  return std::clamp(sigmoid(model.raw_score(x)), std::numeric_limits<double>::min(),
                    std::nextafter(1.0, 0.0));
}

namespace {

constexpr std::uint16_t kMissingBin = 0xFFFF;

struct FeatureBins {
  std::vector<double> cuts;          // bin b holds x <= cuts[b]; last bin is x > cuts.back()
  std::vector<std::uint16_t> codes;  // per sample
  std::size_t bin_count() const { return cuts.size() + 1; }
};

FeatureBins bin_feature(std::span<const double> matrix, std::size_t rows, std::size_t cols,
                        std::size_t f, int max_bins) {
  FeatureBins fb;
  std::vector<double> values;
  values.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double v = matrix[i * cols + f];
    if (!std::isnan(v)) values.push_back(v);
  }
  std::sort(values.begin(), values.end());
  std::vector<double> distinct = values;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() <= static_cast<std::size_t>(max_bins)) {
    if (!distinct.empty()) fb.cuts.assign(distinct.begin(), distinct.end() - 1);
  } else {
    // Cut at sample quantiles; each cut is an observed value.
    for (int j = 1; j < max_bins; ++j) {
      const std::size_t pos = static_cast<std::size_t>(j) * values.size() / max_bins;
      const double v = values[std::min(pos, values.size() - 1)];
      if (v < distinct.back() && (fb.cuts.empty() || v > fb.cuts.back())) fb.cuts.push_back(v);
    }
  }
  fb.codes.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    const double v = matrix[i * cols + f];
    if (std::isnan(v)) {
      fb.codes[i] = kMissingBin;
    } else {
      fb.codes[i] = static_cast<std::uint16_t>(
          std::lower_bound(fb.cuts.begin(), fb.cuts.end(), v) - fb.cuts.begin());
    }
  }
  return fb;
}

double logistic_loss(double f, double y) {
  // log(1 + e^f) - y f, computed stably.
  const double softplus = f > 0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
  return softplus - y * f;
}

struct Split {
  double gain = 0.0;
  int feature = -1;
  int bin = -1;
  bool missing_left = true;
};

struct PendingNode {
  int node;
  int depth;
  std::vector<std::uint32_t> rows;
};

}  // namespace

Ensemble train(std::span<const double> matrix, std::span<const int> labels,
               std::span<const double> weights, std::vector<std::string> feature_names,
               const TrainConfig& config, TrainReport* report) {
  config.validate();
  const std::size_t cols = feature_names.size();
  const std::size_t rows = labels.size();
  if (cols == 0) fail(ErrorCode::kDimension, "no features");
  if (matrix.size() != rows * cols) fail(ErrorCode::kDimension, "matrix size does not match labels");
  if (!weights.empty() && weights.size() != rows) fail(ErrorCode::kDimension, "weights size mismatch");

  std::vector<double> w(rows), y(rows);
  double pos_w = 0, neg_w = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    y[i] = labels[i] ? 1.0 : 0.0;
    w[i] = (weights.empty() ? 1.0 : weights[i]) * (labels[i] ? config.positive_class_weight : 1.0);
    (labels[i] ? pos_w : neg_w) += w[i];
  }
  if (pos_w <= 0.0 || neg_w <= 0.0) fail(ErrorCode::kDegenerateLabels, "degenerate labels");

  Ensemble model;
  model.feature_names = std::move(feature_names);
  model.config = config;
  model.base_score = std::log(pos_w / neg_w);

  std::vector<FeatureBins> bins;
  bins.reserve(cols);
  for (std::size_t f = 0; f < cols; ++f) bins.push_back(bin_feature(matrix, rows, cols, f, config.bins));

  std::vector<double> score(rows, model.base_score), grad(rows), hess(rows);
  const double total_w = pos_w + neg_w;
  auto mean_loss = [&] {
    double sum = 0;
    for (std::size_t i = 0; i < rows; ++i) sum += w[i] * logistic_loss(score[i], y[i]);
    return sum / total_w;
  };
  if (report) report->loss = {mean_loss()};

  const double lambda = config.l2_leaf;
  std::vector<double> hist_g, hist_h;

  for (int t = 0; t < config.trees; ++t) {
    for (std::size_t i = 0; i < rows; ++i) {
      const double p = sigmoid(score[i]);
      grad[i] = w[i] * (p - y[i]);
      hess[i] = w[i] * p * (1.0 - p);
    }
    Tree tree;
    tree.nodes.emplace_back();
    std::vector<PendingNode> frontier;
    {
      PendingNode root{0, 0, std::vector<std::uint32_t>(rows)};
      for (std::size_t i = 0; i < rows; ++i) root.rows[i] = static_cast<std::uint32_t>(i);
      frontier.push_back(std::move(root));
    }
    std::vector<PendingNode> leaves;

    while (!frontier.empty()) {
      std::vector<PendingNode> next;
      for (auto& pending : frontier) {
        double g_sum = 0, h_sum = 0;
        for (auto r : pending.rows) {
          g_sum += grad[r];
          h_sum += hess[r];
        }
        Split best;
        if (pending.depth < config.max_depth && pending.rows.size() >= 2 &&
            h_sum >= 2 * config.min_child_weight) {
          const double parent = g_sum * g_sum / (h_sum + lambda);
          for (std::size_t f = 0; f < cols; ++f) {
            const auto& fb = bins[f];
            const std::size_t nb = fb.bin_count();
            if (nb < 2) continue;
            hist_g.assign(nb, 0.0);
            hist_h.assign(nb, 0.0);
            double miss_g = 0, miss_h = 0;
            for (auto r : pending.rows) {
              const auto code = fb.codes[r];
              if (code == kMissingBin) {
                miss_g += grad[r];
                miss_h += hess[r];
              } else {
                hist_g[code] += grad[r];
                hist_h[code] += hess[r];
              }
            }
            double gl = 0, hl = 0;
            for (std::size_t b = 0; b + 1 < nb; ++b) {
              gl += hist_g[b];
              hl += hist_h[b];
              for (int side = 0; side < 2; ++side) {
                const bool miss_left = side == 0;
                const double GL = gl + (miss_left ? miss_g : 0.0);
                const double HL = hl + (miss_left ? miss_h : 0.0);
                const double GR = g_sum - GL;
                const double HR = h_sum - HL;
                if (HL < config.min_child_weight || HR < config.min_child_weight) continue;
                const double gain =
                    0.5 * (GL * GL / (HL + lambda) + GR * GR / (HR + lambda) - parent);
                if (gain > best.gain + 1e-12) {
                  best = {gain, static_cast<int>(f), static_cast<int>(b), miss_left};
                }
              }
            }
          }
        }
        if (best.feature < 0) {
          leaves.push_back(std::move(pending));
          continue;
        }
        const auto& fb = bins[static_cast<std::size_t>(best.feature)];
        const int left_id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        Node& node = tree.nodes[static_cast<std::size_t>(pending.node)];
        node.feature = best.feature;
        node.threshold = fb.cuts[static_cast<std::size_t>(best.bin)];
        node.missing_left = best.missing_left;
        node.left = left_id;
        node.right = left_id + 1;
        node.gain = best.gain;
        PendingNode l{left_id, pending.depth + 1, {}}, r{left_id + 1, pending.depth + 1, {}};
        for (auto row : pending.rows) {
          const auto code = fb.codes[row];
          const bool go_left =
              code == kMissingBin ? best.missing_left : code <= static_cast<std::uint16_t>(best.bin);
          (go_left ? l.rows : r.rows).push_back(row);
        }
        next.push_back(std::move(l));
        next.push_back(std::move(r));
      }
      frontier = std::move(next);
    }

    for (auto& leaf : leaves) {
      double g_sum = 0, h_sum = 0;
      for (auto r : leaf.rows) {
        g_sum += grad[r];
        h_sum += hess[r];
      }
      double value = -g_sum / (h_sum + lambda) * config.learning_rate;
      // Backtrack so the leaf's own loss never rises; leaves partition the
      // rows, so total training loss is then non-increasing.
      double before = 0;
      for (auto r : leaf.rows) before += w[r] * logistic_loss(score[r], y[r]);
      for (int attempt = 0; attempt < 60 && value != 0.0; ++attempt) {
        double after = 0;
        for (auto r : leaf.rows) after += w[r] * logistic_loss(score[r] + value, y[r]);
        if (after <= before) break;
        value = attempt == 59 ? 0.0 : value * 0.5;
      }
      tree.nodes[static_cast<std::size_t>(leaf.node)].value = value;
      for (auto r : leaf.rows) score[r] += value;
    }
    model.trees.push_back(std::move(tree));
    if (report) report->loss.push_back(mean_loss());
    logger().debug("gbdt round {} done", t);
  }
  return model;
}

std::map<std::string, double> feature_importance(const Ensemble& model) {
  std::map<std::string, double> out;
  for (const auto& name : model.feature_names) out[name] = 0.0;
  for (const auto& tree : model.trees) {
    for (const auto& node : tree.nodes) {
      if (node.feature >= 0) out[model.feature_names[static_cast<std::size_t>(node.feature)]] += node.gain;
    }
  }
  return out;
}

Json Ensemble::to_json() const {
  Json trees_json = Json::array();
  for (const auto& tree : trees) {
    Json feature = Json::array(), threshold = Json::array(), missing = Json::array(),
         left = Json::array(), right = Json::array(), value = Json::array(), gain = Json::array();
    for (const auto& n : tree.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      missing.push_back(n.missing_left);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
      gain.push_back(n.gain);
    }
    trees_json.push_back({{"feature", feature}, {"threshold", threshold}, {"missing_left", missing},
                          {"left", left},       {"right", right},         {"value", value},
                          {"gain", gain}});
  }
  return {{"format_version", kFormat},
          {"base_score", base_score},
          {"trees", std::move(trees_json)},
          {"encoder", encoder ? encoder->to_json() : Json(nullptr)},
          {"schema_hash", schema_hash},
          {"feature_names", feature_names},
          {"view", to_string(view)},
          {"task", task},
          {"config", config.to_json()}};
}

Ensemble Ensemble::from_json(const Json& doc, const std::string& expected_schema_hash) {
  try {
    const auto format = doc.at("format_version").get<std::string>();
    if (format != kFormat) fail(ErrorCode::kVersion, "unsupported model format: " + format);
    Ensemble m;
    m.base_score = doc.at("base_score").get<double>();
    m.schema_hash = doc.at("schema_hash").get<std::string>();
    m.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    m.view = view_from_string(doc.at("view").get<std::string>());
    m.task = doc.value("task", "");
    if (auto it = doc.find("config"); it != doc.end()) m.config = TrainConfig::from_json(*it);
    if (const auto& enc = doc.at("encoder"); !enc.is_null()) {
      m.encoder = EncoderState::from_json(enc);
      if (m.encoder->schema_hash != m.schema_hash) {
        fail(ErrorCode::kSchemaMismatch, "encoder and model disagree on schema_hash");
      }
    }
    if (!expected_schema_hash.empty() && m.schema_hash != expected_schema_hash) {
      fail(ErrorCode::kSchemaMismatch, "model schema_hash " + m.schema_hash + " does not match " +
                                           expected_schema_hash);
    }
    const int cols = static_cast<int>(m.feature_names.size());
    for (const auto& t : doc.at("trees")) {
      const auto feature = t.at("feature").get<std::vector<int>>();
      const auto threshold = t.at("threshold").get<std::vector<double>>();
      const auto missing = t.at("missing_left").get<std::vector<bool>>();
      const auto left = t.at("left").get<std::vector<int>>();
      const auto right = t.at("right").get<std::vector<int>>();
      const auto value = t.at("value").get<std::vector<double>>();
      const auto gain = t.at("gain").get<std::vector<double>>();
      const std::size_t n = feature.size();
      if (n == 0 || threshold.size() != n || missing.size() != n || left.size() != n ||
          right.size() != n || value.size() != n || gain.size() != n) {
        fail(ErrorCode::kParse, "tree arrays have inconsistent lengths");
      }
      Tree tree;
      tree.nodes.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        Node& node = tree.nodes[i];
        node = {feature[i], threshold[i], static_cast<bool>(missing[i]), left[i], right[i], value[i], gain[i]};
        if (node.feature >= cols) fail(ErrorCode::kParse, "node feature index out of range");
        if (node.feature >= 0) {
          // Children must come after their parent, which also rules out cycles.
          auto valid = [&](int c) { return c > static_cast<int>(i) && c < static_cast<int>(n); };
          if (!valid(node.left) || !valid(node.right)) fail(ErrorCode::kParse, "bad child index");
        }
      }
      m.trees.push_back(std::move(tree));
    }
    return m;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed model: ") + e.what());
  }
}

void save(const Ensemble& model, const std::filesystem::path& path) {
  write_file(path, model.to_json().dump() + "\n");
}

Ensemble load(const std::filesystem::path& path, const std::string& expected_schema_hash) {
  const auto text = read_file(path);
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return Ensemble::from_json(doc, expected_schema_hash);
}

}  // namespace cgate::gbdt
