#include "cgate/schema.hpp"

#include <set>

#include "cgate/error.hpp"

namespace cgate {

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kScalar: return "scalar";
    case FeatureKind::kCategorical: return "categorical";
    case FeatureKind::kFlag: return "flag";
  }
  return "?";
}

std::string_view to_string(Stage stage) {
  return stage == Stage::kTrigger ? "trigger" : "filter";
}

std::string_view to_string(View view) {
  return view == View::kTrigger ? "trigger" : "filter";
}

View view_from_string(std::string_view text) {
  if (text == "trigger") return View::kTrigger;
  if (text == "filter") return View::kFilter;
  fail(ErrorCode::kParse, "unknown view: " + std::string(text));
}

FeatureSchema::FeatureSchema(std::string version, std::vector<SchemaEntry> entries)
    : version_(std::move(version)), entries_(std::move(entries)) {
  bool in_filter = false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& entry = entries_[i];
    if (entry.name.empty()) fail(ErrorCode::kValidation, "schema entry with empty name");
    if (!index_.emplace(entry.name, i).second) {
      fail(ErrorCode::kValidation, "duplicate schema entry: " + entry.name);
    }
    if (entry.stage == Stage::kFilter) {
      in_filter = true;
    } else {
      if (in_filter) {
        fail(ErrorCode::kValidation,
             "trigger entry after filter entries: " + entry.name);
      }
      ++trigger_count_;
    }
  }
  hash_ = sha256_hex(canonical());
}

std::size_t FeatureSchema::view_size(View view) const {
  return view == View::kTrigger ? trigger_count_ : entries_.size();
}

const SchemaEntry* FeatureSchema::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Json FeatureSchema::to_json() const {
  Json entries = Json::array();
  for (const auto& entry : entries_) {
    Json e = {{"name", entry.name},
              {"kind", to_string(entry.kind)},
              {"stage", to_string(entry.stage)}};
    if (entry.kind == FeatureKind::kScalar) e["unit"] = entry.unit;
    if (entry.kind == FeatureKind::kCategorical) e["categories"] = entry.categories;
    entries.push_back(std::move(e));
  }
  return {{"format", kFormat}, {"version", version_}, {"entries", std::move(entries)}};
}

FeatureSchema FeatureSchema::from_json(const Json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kFormat) {
      fail(ErrorCode::kVersion, "unsupported schema format: " + doc.at("format").dump());
    }
    std::vector<SchemaEntry> entries;
    for (const auto& e : doc.at("entries")) {
      SchemaEntry entry;
      entry.name = e.at("name").get<std::string>();
      const auto kind = e.at("kind").get<std::string>();
      if (kind == "scalar") {
        entry.kind = FeatureKind::kScalar;
        entry.unit = e.value("unit", "");
      } else if (kind == "categorical") {
        entry.kind = FeatureKind::kCategorical;
        entry.categories = e.value("categories", std::vector<std::string>{});
      } else if (kind == "flag") {
        entry.kind = FeatureKind::kFlag;
      } else {
        fail(ErrorCode::kParse, "unknown feature kind: " + kind);
      }
      const auto stage = e.at("stage").get<std::string>();
      if (stage != "trigger" && stage != "filter") {
        fail(ErrorCode::kParse, "unknown stage: " + stage);
      }
      entry.stage = stage == "trigger" ? Stage::kTrigger : Stage::kFilter;
      entries.push_back(std::move(entry));
    }
    return FeatureSchema(doc.at("version").get<std::string>(), std::move(entries));
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed schema: ") + e.what());
  }
}

std::string FeatureSchema::canonical() const { return to_json().dump(); }

namespace {

SchemaEntry scalar(std::string name, Stage stage, std::string unit) {
  return {std::move(name), FeatureKind::kScalar, stage, std::move(unit), {}};
}
SchemaEntry flag(std::string name, Stage stage) {
  return {std::move(name), FeatureKind::kFlag, stage, {}, {}};
}
SchemaEntry categorical(std::string name, Stage stage, std::vector<std::string> domain) {
  return {std::move(name), FeatureKind::kCategorical, stage, {}, std::move(domain)};
}

}  // namespace

const FeatureSchema& default_schema() {
  static const FeatureSchema schema = [] {
    const auto t = Stage::kTrigger;
    const auto f = Stage::kFilter;
    std::vector<SchemaEntry> entries = {
        scalar("typing_speed", t, "chars/sec"),
        scalar("ms_since_last_keystroke", t, "ms"),
        scalar("prefix_length", t, "chars"),
        scalar("caret_line", t, "lines"),
        scalar("caret_column", t, "chars"),
        categorical("node_kind", t,
                    {"identifier", "call_args", "statement_start", "block_start",
                     "comment", "string_literal", "import", "other"}),
        flag("in_comment", t),
        flag("in_string", t),
        categorical("last_action", t,
                    {"typing", "backspace", "paste", "newline", "navigation", "undo"}),
        scalar("session_accept_count", t, "count"),
        scalar("session_cancel_count", t, "count"),
        categorical("file_extension", t, {"kt", "kts", "py", "php", "cs", "java"}),
        categorical("hour_bucket", t, {"night", "morning", "afternoon", "evening"}),
        scalar("line_length", t, "chars"),
        scalar("indent_level", t, "levels"),
        scalar("chars_after_caret", t, "chars"),
        flag("at_line_end", t),
        flag("prev_completion_accepted", t),
        scalar("ms_since_last_completion", t, "ms"),
        scalar("document_lines", t, "lines"),
        scalar("generation_latency_ms", f, "ms"),
        scalar("mean_logprob", f, "nats/token"),
        scalar("min_logprob", f, "nats"),
        scalar("context_tokens", f, "tokens"),
        scalar("completion_lines", f, "lines"),
        scalar("completion_length", f, "symbols"),
        flag("compilable", f),
    };
    return FeatureSchema("1.0.0", std::move(entries));
  }();
  return schema;
}

void FeatureBag::set_scalar(const std::string& name, std::optional<double> value) {
  categoricals.erase(name);
  flags.erase(name);
  scalars.insert_or_assign(name, value);
}

void FeatureBag::set_categorical(const std::string& name, std::optional<std::string> value) {
  scalars.erase(name);
  flags.erase(name);
  categoricals.insert_or_assign(name, std::move(value));
}

void FeatureBag::set_flag(const std::string& name, std::optional<bool> value) {
  scalars.erase(name);
  categoricals.erase(name);
  flags.insert_or_assign(name, value);
}

bool FeatureBag::contains(std::string_view name) const {
  return scalars.find(name) != scalars.end() ||
         categoricals.find(name) != categoricals.end() || flags.find(name) != flags.end();
}

std::vector<std::string> FeatureBag::names() const {
  std::vector<std::string> out;
  out.reserve(size());
  for (const auto& [name, _] : scalars) out.push_back(name);
  for (const auto& [name, _] : categoricals) out.push_back(name);
  for (const auto& [name, _] : flags) out.push_back(name);
  return out;
}

Json FeatureBag::to_json() const {
  Json s = Json::object(), c = Json::object(), f = Json::object();
  for (const auto& [name, v] : scalars) s[name] = v ? Json(*v) : Json(nullptr);
  for (const auto& [name, v] : categoricals) c[name] = v ? Json(*v) : Json(nullptr);
  for (const auto& [name, v] : flags) f[name] = v ? Json(*v) : Json(nullptr);
  return {{"scalars", std::move(s)}, {"categoricals", std::move(c)}, {"flags", std::move(f)}};
}

FeatureBag FeatureBag::from_json(const Json& doc) {
  if (!doc.is_object()) fail(ErrorCode::kParse, "feature bag must be an object");
  FeatureBag bag;
  std::set<std::string> seen;
  auto claim = [&](const std::string& name) {
    if (!seen.insert(name).second) {
      fail(ErrorCode::kParse, "feature in more than one map: " + name);
    }
  };
  if (auto it = doc.find("scalars"); it != doc.end()) {
    for (const auto& [name, v] : it->items()) {
      claim(name);
      if (!v.is_null() && !v.is_number()) fail(ErrorCode::kParse, "scalar " + name + " not a number");
      bag.scalars.emplace(name, v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    }
  }
  if (auto it = doc.find("categoricals"); it != doc.end()) {
    for (const auto& [name, v] : it->items()) {
      claim(name);
      if (!v.is_null() && !v.is_string()) fail(ErrorCode::kParse, "categorical " + name + " not a string");
      bag.categoricals.emplace(
          name, v.is_null() ? std::nullopt : std::optional<std::string>(v.get<std::string>()));
    }
  }
  if (auto it = doc.find("flags"); it != doc.end()) {
    for (const auto& [name, v] : it->items()) {
      claim(name);
      if (!v.is_null() && !v.is_boolean()) fail(ErrorCode::kParse, "flag " + name + " not a boolean");
      bag.flags.emplace(name, v.is_null() ? std::nullopt : std::optional<bool>(v.get<bool>()));
    }
  }
  return bag;
}

}  // namespace cgate
