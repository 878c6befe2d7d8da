#include "cgate/hybrid.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <numeric>

#include <fmt/format.h>

#include "cgate/error.hpp"
#include "cgate/log.hpp"
#include "cgate/rng.hpp"

namespace cgate::hybrid {

void HybridConfig::validate() const {
  if (vocab_buckets == 0 || !std::has_single_bit(vocab_buckets)) {
    fail(ErrorCode::kConfig, "vocab_buckets must be a power of two");
  }
  if (embed_dim <= 0 || tabular_hidden <= 0 || head_hidden <= 0) {
    fail(ErrorCode::kConfig, "hybrid dimensions must be positive");
  }
  if (epochs < 0 || batch_size <= 0 || !(step_size > 0.0)) {
    fail(ErrorCode::kConfig, "epochs >= 0, batch_size > 0 and step_size > 0 required");
  }
}

Json HybridConfig::to_json() const {
  return {{"vocab_buckets", vocab_buckets}, {"embed_dim", embed_dim},   {"tabular_hidden", tabular_hidden},
          {"head_hidden", head_hidden},     {"epochs", epochs},         {"batch_size", batch_size},
          {"step_size", step_size},         {"seed", seed}};
}

HybridConfig HybridConfig::from_json(const Json& doc) {
  HybridConfig c;
  c.vocab_buckets = doc.value("vocab_buckets", c.vocab_buckets);
  c.embed_dim = doc.value("embed_dim", c.embed_dim);
  c.tabular_hidden = doc.value("tabular_hidden", c.tabular_hidden);
  c.head_hidden = doc.value("head_hidden", c.head_hidden);
  c.epochs = doc.value("epochs", c.epochs);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.step_size = doc.value("step_size", c.step_size);
  c.seed = doc.value("seed", c.seed);
  return c;
}

std::vector<std::uint32_t> tokenize_context(std::string_view text, std::uint32_t vocab_buckets) {
  std::vector<std::uint32_t> ids;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    ids.push_back(static_cast<std::uint32_t>(fnv1a64(token) & (vocab_buckets - 1)));
    token.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) token.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  return ids;
}

std::vector<std::uint32_t> make_tokens(std::string_view text, std::uint32_t vocab_buckets) {
  auto ids = tokenize_context(text, vocab_buckets);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Layout HybridModel::layout() const {
  Layout l{};
  l.e = config.embed_dim;
  l.h = config.tabular_hidden;
  l.k = config.head_hidden;
  l.input_dim = input_dim;
  const std::size_t e = l.e, h = l.h, k = l.k, d = input_dim;
  std::size_t off = 0;
  l.embed = off, off += static_cast<std::size_t>(config.vocab_buckets) * e;
  l.w1 = off, off += h * d;
  l.b1 = off, off += h;
  l.w2 = off, off += h * h;
  l.b2 = off, off += h;
  l.w3 = off, off += k * (e + h);
  l.b3 = off, off += k;
  l.w4 = off, off += k;
  l.b4 = off, off += 1;
  l.total = off;
  return l;
}

namespace {

struct Activations {
  std::vector<double> u, h1, t, c, h3;
  double z = 0;
};

void forward(const Layout& l, const double* p, std::span<const std::uint32_t> tokens,
             std::span<const double> x, Activations& a) {
  const std::size_t e = l.e, h = l.h, k = l.k, d = l.input_dim;
  a.u.assign(e, 0.0);
  if (!tokens.empty()) {
    for (auto id : tokens) {
      const double* row = p + l.embed + static_cast<std::size_t>(id) * e;
      for (std::size_t j = 0; j < e; ++j) a.u[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (auto& v : a.u) v *= inv;
  }
  a.h1.resize(h);
  for (std::size_t i = 0; i < h; ++i) {
    double s = p[l.b1 + i];
    const double* w = p + l.w1 + i * d;
    for (std::size_t j = 0; j < d; ++j) s += w[j] * x[j];
    a.h1[i] = std::tanh(s);
  }
  a.t.resize(h);
  for (std::size_t i = 0; i < h; ++i) {
    double s = p[l.b2 + i];
    const double* w = p + l.w2 + i * h;
    for (std::size_t j = 0; j < h; ++j) s += w[j] * a.h1[j];
    a.t[i] = s;
  }
  a.c.resize(e + h);
  std::copy(a.u.begin(), a.u.end(), a.c.begin());
  std::copy(a.t.begin(), a.t.end(), a.c.begin() + static_cast<std::ptrdiff_t>(e));
  a.h3.resize(k);
  double z = p[l.b4];
  for (std::size_t i = 0; i < k; ++i) {
    double s = p[l.b3 + i];
    const double* w = p + l.w3 + i * (e + h);
    for (std::size_t j = 0; j < e + h; ++j) s += w[j] * a.c[j];
    a.h3[i] = std::tanh(s);
    z += p[l.w4 + i] * a.h3[i];
  }
  a.z = z;
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Accumulates dLoss/dparams (scaled by `scale`) for one example.
void backward(const Layout& l, const double* p, const Example& ex, const Activations& a, double scale,
              double* g, std::vector<double>& dc, std::vector<double>& dh1) {
  const std::size_t e = l.e, h = l.h, k = l.k, d = l.input_dim;
  const double dz = (sigmoid(a.z) - ex.label) * scale;
  g[l.b4] += dz;
  dc.assign(e + h, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    g[l.w4 + i] += dz * a.h3[i];
    const double da3 = dz * p[l.w4 + i] * (1.0 - a.h3[i] * a.h3[i]);
    if (da3 == 0.0) continue;
    g[l.b3 + i] += da3;
    double* gw = g + l.w3 + i * (e + h);
    const double* w = p + l.w3 + i * (e + h);
    for (std::size_t j = 0; j < e + h; ++j) {
      gw[j] += da3 * a.c[j];
      dc[j] += da3 * w[j];
    }
  }
  if (!ex.tokens.empty()) {
    const double inv = 1.0 / static_cast<double>(ex.tokens.size());
    for (auto id : ex.tokens) {
      double* row = g + l.embed + static_cast<std::size_t>(id) * e;
      for (std::size_t j = 0; j < e; ++j) row[j] += dc[j] * inv;
    }
  }
  dh1.assign(h, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    const double dt = dc[e + i];
    g[l.b2 + i] += dt;
    double* gw = g + l.w2 + i * h;
    const double* w = p + l.w2 + i * h;
    for (std::size_t j = 0; j < h; ++j) {
      gw[j] += dt * a.h1[j];
      dh1[j] += dt * w[j];
    }
  }
  for (std::size_t i = 0; i < h; ++i) {
    const double da1 = dh1[i] * (1.0 - a.h1[i] * a.h1[i]);
    g[l.b1 + i] += da1;
    double* gw = g + l.w1 + i * d;
    for (std::size_t j = 0; j < d; ++j) gw[j] += da1 * ex.tabular[j];
  }
}

void check_example(const Layout& l, const Example& ex, std::uint32_t vocab) {
  if (ex.tabular.size() != l.input_dim) {
    fail(ErrorCode::kDimension, fmt::format("expected {} tabular inputs, got {}", l.input_dim, ex.tabular.size()));
  }
  for (auto id : ex.tokens) {
    if (id >= vocab) fail(ErrorCode::kDimension, "token id outside the vocabulary");
  }
}

}  // namespace

double HybridModel::predict(std::span<const std::uint32_t> tokens, std::span<const double> tabular) const {
  const auto l = layout();
  if (tabular.size() != input_dim) {
    fail(ErrorCode::kDimension, fmt::format("expected {} tabular inputs, got {}", input_dim, tabular.size()));
  }
  Activations a;
  forward(l, params.data(), tokens, tabular, a);
  return std::clamp(sigmoid(a.z), std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

double predict_hybrid(const HybridModel& model, std::string_view context, std::span<const double> tabular) {
  const auto tokens = make_tokens(context, model.config.vocab_buckets);
  return model.predict(tokens, tabular);
}

HybridModel init_model(const HybridConfig& config, std::size_t input_dim, double prior) {
  config.validate();
  if (input_dim == 0) fail(ErrorCode::kDimension, "hybrid needs at least one tabular input");
  if (!(prior > 0.0 && prior < 1.0)) fail(ErrorCode::kDegenerateLabels, "degenerate labels");
  HybridModel m;
  m.config = config;
  m.input_dim = input_dim;
  const auto l = m.layout();
  m.params.assign(l.total, 0.0);
  auto rng = Rng::derive(config.seed, 0x1217);
  auto fill = [&](std::size_t off, std::size_t n, double scale) {
    for (std::size_t i = 0; i < n; ++i) m.params[off + i] = rng.normal(0.0, scale);
  };
  const std::size_t e = l.e, h = l.h, k = l.k;
  fill(l.embed, static_cast<std::size_t>(config.vocab_buckets) * e, 0.1);
  fill(l.w1, h * input_dim, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  fill(l.w2, h * h, 1.0 / std::sqrt(static_cast<double>(h)));
  fill(l.w3, k * (e + h), 1.0 / std::sqrt(static_cast<double>(e + h)));
  m.params[l.b4] = logit(prior);
  for (auto& v : m.params) v = static_cast<double>(static_cast<float>(v));
  return m;
}

double loss_and_grad(const HybridModel& model, std::span<const Example> batch, std::vector<double>* grad) {
  const auto l = model.layout();
  if (batch.empty()) return 0.0;
  if (grad) grad->assign(l.total, 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  Activations a;
  std::vector<double> dc, dh1;
  double loss = 0;
  for (const auto& ex : batch) {
    check_example(l, ex, model.config.vocab_buckets);
    forward(l, model.params.data(), ex.tokens, ex.tabular, a);
    loss += softplus(a.z) - ex.label * a.z;
    if (grad) backward(l, model.params.data(), ex, a, scale, grad->data(), dc, dh1);
  }
  return loss * scale;
}

HybridModel train(std::span<const Example> train_set, std::span<const Example> validation,
                  std::size_t input_dim, const HybridConfig& config, TrainReport* report) {
  config.validate();
  std::size_t positives = 0;
  for (const auto& ex : train_set) positives += ex.label != 0;
  if (positives == 0 || positives == train_set.size()) fail(ErrorCode::kDegenerateLabels, "degenerate labels");
  HybridModel model =
      init_model(config, input_dim, static_cast<double>(positives) / static_cast<double>(train_set.size()));
  const auto l = model.layout();
  for (const auto& ex : train_set) check_example(l, ex, config.vocab_buckets);
  for (const auto& ex : validation) check_example(l, ex, config.vocab_buckets);

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::vector<double> grad(l.total, 0.0), m1(l.total, 0.0), m2(l.total, 0.0);
  std::vector<std::uint32_t> touched;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  Activations a;
  std::vector<double> dc, dh1;
  std::uint64_t step = 0;
  const std::size_t e = l.e;
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto rng = Rng::derive(config.seed, 0x5000 + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      const double scale = 1.0 / static_cast<double>(end - start);
      touched.clear();
      double loss = 0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& ex = train_set[order[b]];
        forward(l, model.params.data(), ex.tokens, ex.tabular, a);
        loss += softplus(a.z) - ex.label * a.z;
        backward(l, model.params.data(), ex, a, scale, grad.data(), dc, dh1);
        touched.insert(touched.end(), ex.tokens.begin(), ex.tokens.end());
      }
      epoch_loss += loss * scale;
      ++batches;
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      auto adam = [&](std::size_t i) {
        m1[i] = kBeta1 * m1[i] + (1 - kBeta1) * grad[i];
        m2[i] = kBeta2 * m2[i] + (1 - kBeta2) * grad[i] * grad[i];
        model.params[i] -= config.step_size * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + kEps);
        grad[i] = 0.0;
      };
      // Embedding rows are updated lazily: only rows seen in this batch.
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
      for (auto id : touched) {
        const std::size_t row = l.embed + static_cast<std::size_t>(id) * e;
        for (std::size_t j = 0; j < e; ++j) adam(row + j);
      }
      for (std::size_t i = l.w1; i < l.total; ++i) adam(i);
    }
    if (report) {
      report->train_loss.push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);
      if (!validation.empty()) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const auto& ex : validation) {
          scores.push_back(model.predict(ex.tokens, ex.tabular));
          labels.push_back(ex.label);
        }
        report->validation_auc.push_back(roc_auc(scores, labels));
        logger().info("hybrid epoch {} loss {:.5f} val_auc {:.4f}", epoch, report->train_loss.back(),
                     report->validation_auc.back());
      }
    }
  }
  // Artifacts store float32; round now so saved and in-memory models agree.
  for (auto& v : model.params) v = static_cast<double>(static_cast<float>(v));
  return model;
}

namespace {

std::string pack_floats(std::span<const double> values) {
  std::vector<std::uint8_t> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return base64_encode(bytes);
}

std::vector<double> unpack_floats(std::string_view text, std::size_t expected) {
  const auto bytes = base64_decode(text);
  if (bytes.size() != expected * 4) fail(ErrorCode::kParse, "weight blob has the wrong length");
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

struct Group {
  const char* name;
  std::size_t Layout::*offset;
};
constexpr Group kGroups[] = {{"embed", &Layout::embed}, {"w1", &Layout::w1}, {"b1", &Layout::b1},
                             {"w2", &Layout::w2},       {"b2", &Layout::b2}, {"w3", &Layout::w3},
                             {"b3", &Layout::b3},       {"w4", &Layout::w4}, {"b4", &Layout::b4}};

std::size_t group_end(const Layout& l, std::size_t index) {
  return index + 1 < std::size(kGroups) ? l.*(kGroups[index + 1].offset) : l.total;
}

}  // namespace

Json HybridModel::to_json() const {
  const auto l = layout();
  Json weights = Json::object();
  for (std::size_t g = 0; g < std::size(kGroups); ++g) {
    const std::size_t begin = l.*(kGroups[g].offset);
    weights[kGroups[g].name] =
        pack_floats(std::span<const double>(params).subspan(begin, group_end(l, g) - begin));
  }
  return {{"format_version", kFormat},
          {"config", config.to_json()},
          {"input_dim", input_dim},
          {"weights", std::move(weights)},
          {"encoder", encoder ? encoder->to_json() : Json(nullptr)},
          {"schema_hash", schema_hash},
          {"feature_names", feature_names},
          {"view", to_string(view)},
          {"task", task}};
}

HybridModel HybridModel::from_json(const Json& doc, const std::string& expected_schema_hash) {
  try {
    const auto format = doc.at("format_version").get<std::string>();
    if (format != kFormat) fail(ErrorCode::kVersion, "unsupported model format: " + format);
    HybridModel m;
    m.config = HybridConfig::from_json(doc.at("config"));
    m.config.validate();
    m.input_dim = doc.at("input_dim").get<std::size_t>();
    m.schema_hash = doc.at("schema_hash").get<std::string>();
    m.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    m.view = view_from_string(doc.at("view").get<std::string>());
    m.task = doc.value("task", "");
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
    const auto l = m.layout();
    m.params.resize(l.total);
    const auto& weights = doc.at("weights");
    for (std::size_t g = 0; g < std::size(kGroups); ++g) {
      const std::size_t begin = l.*(kGroups[g].offset), n = group_end(l, g) - begin;
      const auto values = unpack_floats(weights.at(kGroups[g].name).get<std::string>(), n);
      std::copy(values.begin(), values.end(), m.params.begin() + static_cast<std::ptrdiff_t>(begin));
    }
    return m;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed model: ") + e.what());
  }
}

void save(const HybridModel& model, const std::filesystem::path& path) {
  write_file(path, model.to_json().dump() + "\n");
}

HybridModel load(const std::filesystem::path& path, const std::string& expected_schema_hash) {
  const auto text = read_file(path);
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return HybridModel::from_json(doc, expected_schema_hash);
}

}  // namespace cgate::hybrid
