#include "cgate/events.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include <fmt/format.h>

#include "cgate/error.hpp"
#include "cgate/rng.hpp"

namespace cgate {

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::kNotShown: return "not_shown";
    case Outcome::kAccepted: return "accepted";
    case Outcome::kExplicitCancel: return "explicit_cancel";
    case Outcome::kIgnored: return "ignored";
  }
  return "?";
}

Outcome outcome_from_string(std::string_view text) {
  if (text == "not_shown") return Outcome::kNotShown;
  if (text == "accepted") return Outcome::kAccepted;
  if (text == "explicit_cancel") return Outcome::kExplicitCancel;
  if (text == "ignored") return Outcome::kIgnored;
  fail(ErrorCode::kParse, "unknown outcome: " + std::string(text));
}

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kFull: return "full";
    case SplitTag::kTrain: return "train";
    case SplitTag::kTest: return "test";
  }
  return "?";
}

SplitTag split_from_string(std::string_view text) {
  if (text == "full") return SplitTag::kFull;
  if (text == "train") return SplitTag::kTrain;
  if (text == "test") return SplitTag::kTest;
  fail(ErrorCode::kParse, "unknown split tag: " + std::string(text));
}

Json CompletionEvent::to_json() const {
  Json doc = {{"event_id", event_id},   {"user_id", user_id},
              {"session_id", session_id}, {"timestamp", timestamp_ms},
              {"language", language},   {"trigger_features", trigger_features.to_json()}};
  if (context) doc["context"] = *context;
  return doc;
}

CompletionEvent CompletionEvent::from_json(const Json& doc) {
  CompletionEvent e;
  e.event_id = doc.at("event_id").get<std::string>();
  e.user_id = doc.at("user_id").get<std::string>();
  e.session_id = doc.at("session_id").get<std::string>();
  e.timestamp_ms = doc.at("timestamp").get<std::int64_t>();
  e.language = doc.at("language").get<std::string>();
  e.trigger_features = FeatureBag::from_json(doc.at("trigger_features"));
  if (auto it = doc.find("context"); it != doc.end() && !it->is_null()) {
    e.context = it->get<std::string>();
  }
  return e;
}

Json GenerationRecord::to_json() const {
  return {{"event_id", event_id},
          {"completion_length", completion_length},
          {"filter_features", filter_features.to_json()},
          {"compilable", compilable},
          {"outcome", to_string(outcome)}};
}

GenerationRecord GenerationRecord::from_json(const Json& doc) {
  GenerationRecord g;
  g.event_id = doc.at("event_id").get<std::string>();
  const auto length = doc.at("completion_length").get<std::int64_t>();
  if (length < 0) fail(ErrorCode::kParse, "negative completion_length");
  g.completion_length = static_cast<std::uint32_t>(length);
  g.filter_features = FeatureBag::from_json(doc.at("filter_features"));
  g.compilable = doc.at("compilable").get<bool>();
  g.outcome = outcome_from_string(doc.at("outcome").get<std::string>());
  return g;
}

Json DatasetManifest::to_json() const {
  return {{"version", version},
          {"event_count", event_count},
          {"generation_count", generation_count},
          {"user_count", user_count},
          {"label_imbalance_trigger", real_to_json(label_imbalance_trigger)},
          {"label_imbalance_filter", real_to_json(label_imbalance_filter)},
          {"schema_hash", schema_hash},
          {"split", to_string(split)},
          {"gated", gated}};
}

DatasetManifest DatasetManifest::from_json(const Json& doc) {
  try {
    DatasetManifest m;
    m.version = doc.at("version").get<std::string>();
    if (m.version != kFormat) fail(ErrorCode::kVersion, "unsupported manifest version: " + m.version);
    m.event_count = doc.at("event_count").get<std::int64_t>();
    m.generation_count = doc.at("generation_count").get<std::int64_t>();
    m.user_count = doc.at("user_count").get<std::int64_t>();
    m.label_imbalance_trigger = real_from_json(doc.at("label_imbalance_trigger"));
    m.label_imbalance_filter = real_from_json(doc.at("label_imbalance_filter"));
    m.schema_hash = doc.at("schema_hash").get<std::string>();
    m.split = split_from_string(doc.at("split").get<std::string>());
    m.gated = doc.value("gated", false);
    return m;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed manifest: ") + e.what());
  }
}

std::unordered_map<std::string, std::size_t> Dataset::event_index() const {
  std::unordered_map<std::string, std::size_t> index;
  index.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) index.emplace(events[i].event_id, i);
  return index;
}

std::vector<std::pair<const CompletionEvent*, const GenerationRecord*>> Dataset::joined() const {
  const auto index = event_index();
  std::vector<std::pair<const CompletionEvent*, const GenerationRecord*>> out;
  out.reserve(generations.size());
  for (const auto& g : generations) {
    auto it = index.find(g.event_id);
    if (it != index.end()) out.emplace_back(&events[it->second], &g);
  }
  return out;
}

std::size_t ValidationReport::count(std::string_view kind) const {
  return static_cast<std::size_t>(std::count_if(violations.begin(), violations.end(),
                                                [&](const Violation& v) { return v.kind == kind; }));
}

namespace {

bool same_kind(const FeatureBag& bag, const SchemaEntry& entry) {
  switch (entry.kind) {
    case FeatureKind::kScalar: return bag.scalars.count(entry.name) > 0;
    case FeatureKind::kCategorical: return bag.categoricals.count(entry.name) > 0;
    case FeatureKind::kFlag: return bag.flags.count(entry.name) > 0;
  }
  return false;
}

void check_bag(const FeatureBag& bag, const FeatureSchema& schema, bool trigger_only,
               const std::string& owner, std::vector<Violation>& out) {
  for (const auto& name : bag.names()) {
    const SchemaEntry* entry = schema.find(name);
    if (!entry) {
      out.push_back({"schema_mismatch", owner + ": undeclared feature '" + name + "'"});
    } else if (trigger_only && entry->stage == Stage::kFilter) {
      out.push_back({"filter_field_in_trigger",
                     owner + ": filter-stage feature '" + name + "' in trigger features"});
    } else if (!same_kind(bag, *entry)) {
      out.push_back({"schema_mismatch", owner + ": feature '" + name + "' should be " +
                                            std::string(to_string(entry->kind))});
    }
  }
}

bool imbalance_equal(double a, double b) {
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b));
}

std::string format_imbalance(double v) {
  return std::isinf(v) ? std::string("inf") : fmt::format("{}", v);
}

double imbalance(std::int64_t negatives, std::int64_t positives) {
  if (positives == 0) return kInf;
  return static_cast<double>(negatives) / static_cast<double>(positives);
}

}  // namespace

ValidationReport validate_dataset(std::span<const CompletionEvent> events,
                                  std::span<const GenerationRecord> generations,
                                  const DatasetManifest& manifest, const FeatureSchema& schema) {
  ValidationReport report;
  auto& out = report.violations;

  std::unordered_map<std::string, const CompletionEvent*> by_id;
  std::unordered_map<std::string, std::int64_t> session_clock;
  for (const auto& e : events) {
    if (!by_id.emplace(e.event_id, &e).second) {
      out.push_back({"duplicate_event_id", "event_id '" + e.event_id + "' appears more than once"});
    }
    auto [it, fresh] = session_clock.emplace(e.session_id, e.timestamp_ms);
    if (!fresh) {
      if (e.timestamp_ms < it->second) {
        out.push_back({"timestamp_order", fmt::format("event '{}' goes back in time in session '{}'",
                                                      e.event_id, e.session_id)});
      }
      it->second = std::max(it->second, e.timestamp_ms);
    }
    check_bag(e.trigger_features, schema, true, "event '" + e.event_id + "'", out);
  }

  std::unordered_set<std::string> generated;
  for (const auto& g : generations) {
    const std::string owner = "generation for '" + g.event_id + "'";
    auto it = by_id.find(g.event_id);
    if (it == by_id.end()) {
      out.push_back({"dangling_reference", owner + ": unknown event_id"});
    } else {
      for (const auto& [name, value] : it->second->trigger_features.scalars) {
        auto f = g.filter_features.scalars.find(name);
        if (f != g.filter_features.scalars.end() && f->second != value) {
          out.push_back({"trigger_mismatch", owner + ": '" + name + "' differs from the event"});
        }
      }
    }
    if (!generated.insert(g.event_id).second) {
      out.push_back({"duplicate_generation", owner + ": more than one generation"});
    }
    check_bag(g.filter_features, schema, false, owner, out);
    if (auto f = g.filter_features.flags.find("compilable");
        f != g.filter_features.flags.end() && f->second && *f->second != g.compilable) {
      out.push_back({"schema_mismatch", owner + ": compilable feature disagrees with record"});
    }
  }

  const DatasetManifest actual = dataset_stats(events, generations, schema);
  auto check_count = [&](const char* name, std::int64_t declared, std::int64_t real) {
    if (declared != real) {
      out.push_back({"count_mismatch", fmt::format("{}: manifest {} but data {}", name, declared, real)});
    }
  };
  check_count("event_count", manifest.event_count, actual.event_count);
  check_count("generation_count", manifest.generation_count, actual.generation_count);
  check_count("user_count", manifest.user_count, actual.user_count);
  auto check_imbalance = [&](const char* name, double declared, double real) {
    if (!imbalance_equal(declared, real)) {
      out.push_back({"imbalance_mismatch",
                     fmt::format("{}: manifest {} but data {}", name, format_imbalance(declared),
                                 format_imbalance(real))});
    }
  };
  check_imbalance("label_imbalance_trigger", manifest.label_imbalance_trigger,
                  actual.label_imbalance_trigger);
  check_imbalance("label_imbalance_filter", manifest.label_imbalance_filter,
                  actual.label_imbalance_filter);
  if (manifest.schema_hash != schema.hash()) {
    out.push_back({"schema_hash", "manifest schema_hash " + manifest.schema_hash +
                                      " does not match schema " + schema.hash()});
  }
  return report;
}

ValidationReport validate_dataset(const std::filesystem::path& dir) {
  const Dataset d = io::read_dataset(dir);
  return validate_dataset(d.events, d.generations, d.manifest, d.schema);
}

std::vector<std::string> distinct_users(std::span<const CompletionEvent> events) {
  std::set<std::string> users;
  for (const auto& e : events) users.insert(e.user_id);
  return {users.begin(), users.end()};
}

DatasetManifest dataset_stats(std::span<const CompletionEvent> events,
                              std::span<const GenerationRecord> generations,
                              const FeatureSchema& schema) {
  DatasetManifest m;
  m.event_count = static_cast<std::int64_t>(events.size());
  m.generation_count = static_cast<std::int64_t>(generations.size());
  m.user_count = static_cast<std::int64_t>(distinct_users(events).size());
  std::int64_t positives = 0, negatives = 0, shown_positives = 0, shown_negatives = 0;
  for (const auto& g : generations) {
    const bool positive = label_of(g) == Label::kPositive;
    (positive ? positives : negatives) += 1;
    if (is_shown(g.outcome)) (positive ? shown_positives : shown_negatives) += 1;
  }
  m.label_imbalance_trigger = imbalance(negatives, positives);
  m.label_imbalance_filter = imbalance(shown_negatives, shown_positives);
  m.schema_hash = schema.hash();
  return m;
}

Dataset select_users(const Dataset& dataset, std::span<const std::string> users, SplitTag tag) {
  const std::unordered_set<std::string> keep(users.begin(), users.end());
  Dataset out;
  out.schema = dataset.schema;
  std::unordered_set<std::string> kept_events;
  for (const auto& e : dataset.events) {
    if (keep.count(e.user_id)) {
      out.events.push_back(e);
      kept_events.insert(e.event_id);
    }
  }
  for (const auto& g : dataset.generations) {
    if (kept_events.count(g.event_id)) out.generations.push_back(g);
  }
  out.manifest = dataset_stats(out.events, out.generations, out.schema);
  out.manifest.split = tag;
  out.manifest.gated = dataset.manifest.gated;
  return out;
}

std::pair<Dataset, Dataset> split_by_user(const Dataset& dataset, double test_fraction,
                                          std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(ErrorCode::kConfig, "test_fraction must lie in (0, 1)");
  }
  std::vector<std::string> users = distinct_users(dataset.events);
  if (users.size() < 2) fail(ErrorCode::kValidation, "cannot split: fewer than 2 users");
  Rng rng(seed);
  for (std::size_t i = users.size() - 1; i > 0; --i) {
    std::swap(users[i], users[rng.below(i + 1)]);
  }
  const auto n = static_cast<long long>(users.size());
  const long long n_test =
      std::clamp(std::llround(test_fraction * static_cast<double>(n)), 1LL, n - 1);
  std::vector<std::string> test_users(users.begin(), users.begin() + n_test);
  std::vector<std::string> train_users(users.begin() + n_test, users.end());
  return {select_users(dataset, train_users, SplitTag::kTrain),
          select_users(dataset, test_users, SplitTag::kTest)};
}

namespace io {

namespace {

template <typename T>
std::vector<T> parse_jsonl(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  std::vector<T> out;
  out.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(T::from_json(Json::parse(lines[i])));
    } catch (const Json::exception& e) {
      fail(ErrorCode::kParse, fmt::format("{}:{}: {}", path.string(), i + 1, e.what()));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kParse) throw;
      fail(ErrorCode::kParse, fmt::format("{}:{}: {}", path.string(), i + 1, e.what()));
    }
  }
  return out;
}

template <typename T>
std::string to_jsonl(std::span<const T> items) {
  std::string out;
  for (const auto& item : items) {
    out += item.to_json().dump();
    out += '\n';
  }
  return out;
}

}  // namespace

std::string events_to_jsonl(std::span<const CompletionEvent> events) { return to_jsonl(events); }

std::string generations_to_jsonl(std::span<const GenerationRecord> generations) {
  return to_jsonl(generations);
}

std::vector<CompletionEvent> events_from_jsonl(const std::filesystem::path& path) {
  return parse_jsonl<CompletionEvent>(path);
}

std::vector<GenerationRecord> generations_from_jsonl(const std::filesystem::path& path) {
  return parse_jsonl<GenerationRecord>(path);
}

FeatureSchema read_schema(const std::filesystem::path& path) {
  const auto text = read_file(path);
  try {
    return FeatureSchema::from_json(Json::parse(text));
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

void write_schema(const std::filesystem::path& path, const FeatureSchema& schema) {
  write_file(path, schema.to_json().dump(2) + "\n");
}

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  write_schema(dir / kSchemaFile, dataset.schema);
  write_file(dir / kEventsFile, events_to_jsonl(dataset.events));
  write_file(dir / kGenerationsFile, generations_to_jsonl(dataset.generations));
  write_file(dir / kManifestFile, dataset.manifest.to_json().dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.schema = read_schema(dir / kSchemaFile);
  const auto manifest_text = read_file(dir / kManifestFile);
  try {
    d.manifest = DatasetManifest::from_json(Json::parse(manifest_text));
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, "manifest: " + std::string(e.what()));
  }
  d.events = events_from_jsonl(dir / kEventsFile);
  d.generations = generations_from_jsonl(dir / kGenerationsFile);
  return d;
}

Dataset read_valid_dataset(const std::filesystem::path& dir) {
  auto d = read_dataset(dir);
  const auto report = validate_dataset(d.events, d.generations, d.manifest, d.schema);
  if (!report.ok()) {
    const auto& v = report.violations.front();
    fail(ErrorCode::kValidation, dir.string() + ": " + std::to_string(report.violations.size()) +
                                     " violation(s), first " + v.kind + ": " + v.message);
  }
  return d;
}

}  // namespace io

}  // namespace cgate
