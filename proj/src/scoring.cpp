#include "cgate/scoring.hpp"

#include "cgate/error.hpp"

namespace cgate {

std::string_view to_string(Task task) { return task == Task::kTrigger ? "trigger" : "filter"; }

Task task_from_string(std::string_view text) {
  if (text == "trigger") return Task::kTrigger;
  if (text == "filter") return Task::kFilter;
  fail(ErrorCode::kConfig, "unknown task: " + std::string(text));
}

TaskData task_data(const Dataset& dataset, Task task) {
  TaskData out;
  const auto index = dataset.event_index();
  for (std::size_t g = 0; g < dataset.generations.size(); ++g) {
    const auto& gen = dataset.generations[g];
    auto it = index.find(gen.event_id);
    if (it == index.end()) fail(ErrorCode::kValidation, "generation without event: " + gen.event_id);
    const auto& event = dataset.events[it->second];
    if (task == Task::kFilter && !is_shown(gen.outcome)) continue;
    out.bags.push_back(task == Task::kTrigger ? &event.trigger_features : &gen.filter_features);
    out.labels.push_back(label_of(gen));
    out.contexts.push_back(&event.context);
    out.generations.push_back(g);
  }
  return out;
}

gbdt::Ensemble train_gbdt(const Dataset& dataset, Task task, const gbdt::TrainConfig& config, int folds) {
  const auto data = task_data(dataset, task);
  const View view = view_of(task);
  if (data.bags.size() < static_cast<std::size_t>(folds)) {
    fail(ErrorCode::kDegenerateLabels, "too few records to train");
  }
  const auto fit = fit_encoder(data.bags, data.labels, dataset.schema, view, dataset.manifest.split,
                               folds, config.seed);
  const auto matrix = transform_training(data.bags, fit, dataset.schema, view, Imputation::kMissingMarker);
  std::vector<int> labels;
  labels.reserve(data.labels.size());
  for (auto l : data.labels) labels.push_back(l == Label::kPositive);
  auto model = gbdt::train(matrix, labels, {}, view_names(dataset.schema, view), config);
  model.encoder = fit.state;
  model.schema_hash = dataset.schema.hash();
  model.view = view;
  model.task = std::string(to_string(task));
  return model;
}

namespace {

std::vector<hybrid::Example> hybrid_examples(const TaskData& data, const std::vector<double>& matrix,
                                             std::size_t width, std::uint32_t vocab) {
  std::vector<hybrid::Example> out(data.bags.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!*data.contexts[i]) fail(ErrorCode::kValidation, "hybrid training needs context on every record");
    out[i].tokens = hybrid::make_tokens(**data.contexts[i], vocab);
    out[i].tabular.assign(matrix.begin() + static_cast<std::ptrdiff_t>(i * width),
                          matrix.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
    out[i].label = data.labels[i] == Label::kPositive;
  }
  return out;
}

}  // namespace

hybrid::HybridModel train_hybrid(const Dataset& dataset, const Dataset* validation, Task task,
                                 const hybrid::HybridConfig& config, hybrid::TrainReport* report,
                                 int folds) {
  config.validate();
  const auto data = task_data(dataset, task);
  const View view = view_of(task);
  if (data.bags.size() < static_cast<std::size_t>(folds)) {
    fail(ErrorCode::kDegenerateLabels, "too few records to train");
  }
  const auto fit = fit_encoder(data.bags, data.labels, dataset.schema, view, dataset.manifest.split,
                               folds, config.seed);
  const std::size_t width = dataset.schema.view_size(view);
  const auto matrix = transform_training(data.bags, fit, dataset.schema, view, Imputation::kMidpoint);
  const auto train_set = hybrid_examples(data, matrix, width, config.vocab_buckets);

  std::vector<hybrid::Example> val_set;
  if (validation) {
    if (validation->schema.hash() != dataset.schema.hash()) {
      fail(ErrorCode::kSchemaMismatch, "validation schema differs from the training schema");
    }
    const auto vdata = task_data(*validation, task);
    std::vector<double> vmatrix(vdata.bags.size() * width);
    for (std::size_t i = 0; i < vdata.bags.size(); ++i) {
      transform_into(*vdata.bags[i], fit.state, dataset.schema, view, Imputation::kMidpoint,
                     std::span<double>(vmatrix.data() + i * width, width));
    }
    val_set = hybrid_examples(vdata, vmatrix, width, config.vocab_buckets);
  }
  auto model = hybrid::train(train_set, val_set, width, config, report);
  model.encoder = fit.state;
  model.schema_hash = dataset.schema.hash();
  model.view = view;
  model.task = std::string(to_string(task));
  model.feature_names = view_names(dataset.schema, view);
  return model;
}

Scorer::Scorer(gbdt::Ensemble model, FeatureSchema schema) : model_(std::move(model)), schema_(std::move(schema)) {
  const auto& m = std::get<gbdt::Ensemble>(model_);
  if (!m.encoder) fail(ErrorCode::kValidation, "model artifact has no encoder");
  if (m.schema_hash != schema_.hash()) {
    fail(ErrorCode::kSchemaMismatch, "model schema_hash does not match the dataset schema");
  }
  if (m.feature_count() != schema_.view_size(m.view)) {
    fail(ErrorCode::kDimension, "model feature count does not match the schema view");
  }
  view_ = m.view;
}

Scorer::Scorer(hybrid::HybridModel model, FeatureSchema schema)
    : model_(std::move(model)), schema_(std::move(schema)) {
  const auto& m = std::get<hybrid::HybridModel>(model_);
  if (!m.encoder) fail(ErrorCode::kValidation, "model artifact has no encoder");
  if (m.schema_hash != schema_.hash()) {
    fail(ErrorCode::kSchemaMismatch, "model schema_hash does not match the dataset schema");
  }
  if (m.input_dim != schema_.view_size(m.view)) {
    fail(ErrorCode::kDimension, "model input width does not match the schema view");
  }
  view_ = m.view;
}

Scorer Scorer::load(const std::filesystem::path& path, const FeatureSchema& schema) {
  const auto text = read_file(path);
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  const auto format = doc.is_object() ? doc.value("format_version", std::string()) : std::string();
  auto scorer = [&] {
    if (format.starts_with("cgate-hybrid/")) {
      return Scorer(hybrid::HybridModel::from_json(doc, schema.hash()), schema);
    }
    return Scorer(gbdt::Ensemble::from_json(doc, schema.hash()), schema);
  }();
  scorer.sha256_ = sha256_hex(text);
  return scorer;
}

std::optional<Task> Scorer::task() const {
  const auto& name = std::visit([](const auto& m) -> const std::string& { return m.task; }, model_);
  if (name.empty()) return std::nullopt;
  return task_from_string(name);
}

std::string_view Scorer::family() const { return gbdt() ? "gbdt" : "hybrid"; }

const EncoderState& Scorer::encoder() const {
  return *std::visit([](const auto& m) -> const std::optional<EncoderState>& { return m.encoder; }, model_);
}

std::vector<double> Scorer::encode(const FeatureBag& bag) const {
  return transform(bag, encoder(), schema_, view_,
                   gbdt() ? Imputation::kMissingMarker : Imputation::kMidpoint);
}

double Scorer::score(const FeatureBag& bag, const std::optional<std::string>& context) const {
  const auto x = encode(bag);
  if (const auto* g = gbdt()) return gbdt::predict_proba(*g, x);
  const auto* h = hybrid();
  return hybrid::predict_hybrid(*h, context ? std::string_view(*context) : std::string_view(), x);
}

std::vector<double> score_generations(const Dataset& dataset, const Scorer& scorer) {
  if (dataset.schema.hash() != scorer.schema_hash()) {
    fail(ErrorCode::kSchemaMismatch, "model schema_hash does not match the dataset schema");
  }
  const auto index = dataset.event_index();
  std::vector<double> out;
  out.reserve(dataset.generations.size());
  for (const auto& gen : dataset.generations) {
    auto it = index.find(gen.event_id);
    if (it == index.end()) fail(ErrorCode::kValidation, "generation without event: " + gen.event_id);
    const auto& event = dataset.events[it->second];
    out.push_back(scorer.score(scorer.view() == View::kTrigger ? event.trigger_features : gen.filter_features,
                               event.context));
  }
  return out;
}

}  // namespace cgate
