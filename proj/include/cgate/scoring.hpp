#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cgate/events.hpp"
#include "cgate/gbdt.hpp"
#include "cgate/hybrid.hpp"

namespace cgate {

// trigger: every generation, trigger-time features of its event.
// filter: logged-shown generations, full filter-time features.
enum class Task { kTrigger, kFilter };
std::string_view to_string(Task task);
Task task_from_string(std::string_view text);
constexpr View view_of(Task task) { return task == Task::kTrigger ? View::kTrigger : View::kFilter; }

struct TaskData {
  std::vector<const FeatureBag*> bags;
  std::vector<Label> labels;
  std::vector<const std::optional<std::string>*> contexts;
  std::vector<std::size_t> generations;  // index into dataset.generations
};
TaskData task_data(const Dataset& dataset, Task task);

gbdt::Ensemble train_gbdt(const Dataset& dataset, Task task, const gbdt::TrainConfig& config,
                          int folds = kDefaultFolds);

// Every record must carry context text.
hybrid::HybridModel train_hybrid(const Dataset& dataset, const Dataset* validation, Task task,
                                 const hybrid::HybridConfig& config,
                                 hybrid::TrainReport* report = nullptr, int folds = kDefaultFolds);

// A loaded model of either family bound to the schema it was trained on.
class Scorer {
 public:
  Scorer(gbdt::Ensemble model, FeatureSchema schema);
  Scorer(hybrid::HybridModel model, FeatureSchema schema);
  // Detects the artifact family from format_version.
  static Scorer load(const std::filesystem::path& path, const FeatureSchema& schema);

  View view() const { return view_; }
  std::optional<Task> task() const;
  const std::string& schema_hash() const { return schema_.hash(); }
  const FeatureSchema& schema() const { return schema_; }
  // SHA-256 of the artifact file, empty for in-memory models.
  const std::string& sha256() const { return sha256_; }
  std::string_view family() const;
  const gbdt::Ensemble* gbdt() const { return std::get_if<gbdt::Ensemble>(&model_); }
  const hybrid::HybridModel* hybrid() const { return std::get_if<hybrid::HybridModel>(&model_); }

  std::vector<double> encode(const FeatureBag& bag) const;
  double score(const FeatureBag& bag, const std::optional<std::string>& context = std::nullopt) const;

 private:
  const EncoderState& encoder() const;
  std::variant<gbdt::Ensemble, hybrid::HybridModel> model_;
  FeatureSchema schema_;
  View view_ = View::kFilter;
  std::string sha256_;
};

// One score per dataset generation. Trigger-view scorers read the event's
// trigger features, filter-view scorers the generation's filter features.
std::vector<double> score_generations(const Dataset& dataset, const Scorer& scorer);

}  // namespace cgate
