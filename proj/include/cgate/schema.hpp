#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cgate/util.hpp"

namespace cgate {

enum class FeatureKind { kScalar, kCategorical, kFlag };
enum class Stage { kTrigger, kFilter };
// Trigger view = trigger-stage entries only; filter view = every entry.
enum class View { kTrigger, kFilter };

std::string_view to_string(FeatureKind kind);
std::string_view to_string(Stage stage);
std::string_view to_string(View view);
View view_from_string(std::string_view text);

struct SchemaEntry {
  std::string name;
  FeatureKind kind = FeatureKind::kScalar;
  Stage stage = Stage::kTrigger;
  std::string unit;                     // scalars
  std::vector<std::string> categories;  // categoricals (declared domain)
};

// Ordered feature declarations. Trigger-stage entries come first, so the
// trigger view is always a prefix of the filter view.
class FeatureSchema {
 public:
  static constexpr std::string_view kFormat = "cgate-schema/1";

  FeatureSchema() = default;
  FeatureSchema(std::string version, std::vector<SchemaEntry> entries);

  const std::string& version() const { return version_; }
  const std::vector<SchemaEntry>& entries() const { return entries_; }
  const std::string& hash() const { return hash_; }

  std::size_t view_size(View view) const;
  std::size_t trigger_size() const { return trigger_count_; }
  const SchemaEntry* find(std::string_view name) const;
  std::optional<std::size_t> index_of(std::string_view name) const;

  Json to_json() const;
  static FeatureSchema from_json(const Json& doc);
  // Sorted keys, no whitespace; hashed into schema_hash.
  std::string canonical() const;

  bool operator==(const FeatureSchema& other) const { return hash_ == other.hash_; }

 private:
  std::string version_;
  std::vector<SchemaEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::size_t trigger_count_ = 0;
  std::string hash_;
};

// The desk-scale completion telemetry schema shipped as data/schema.json.
const FeatureSchema& default_schema();

// Per-event feature payload. Each name lives in exactly one of the maps; an
// empty optional is an explicit missing value.
struct FeatureBag {
  std::map<std::string, std::optional<double>, std::less<>> scalars;
  std::map<std::string, std::optional<std::string>, std::less<>> categoricals;
  std::map<std::string, std::optional<bool>, std::less<>> flags;

  void set_scalar(const std::string& name, std::optional<double> value);
  void set_categorical(const std::string& name, std::optional<std::string> value);
  void set_flag(const std::string& name, std::optional<bool> value);

  bool contains(std::string_view name) const;
  std::size_t size() const { return scalars.size() + categoricals.size() + flags.size(); }
  std::vector<std::string> names() const;

  Json to_json() const;
  static FeatureBag from_json(const Json& doc);

  bool operator==(const FeatureBag&) const = default;
};

}  // namespace cgate
