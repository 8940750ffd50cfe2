#ifndef HARMICL_EVALUATOR_HPP
#define HARMICL_EVALUATOR_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "harmicl/corpus.hpp"
#include "harmicl/embedding.hpp"
#include "harmicl/gateway.hpp"
#include "harmicl/prompting.hpp"
#include "harmicl/selectors.hpp"
#include "json.hpp"

namespace harmicl {

enum class RunApproach { ZSL, FS_ICL, FS_ICL_CG, FS_ICL_DII, ModerationBaseline };
std::string_view to_string(RunApproach a);
std::optional<RunApproach> parse_run_approach(std::string_view s);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  RunApproach approach = RunApproach::FS_ICL;
  ModelHandle model;
  SelectionConfig selection;
  PromptOptions prompt;
  std::optional<std::size_t> test_limit;
  std::uint64_t seed = 0;
  int parallelism = 1;
  double moderation_threshold = 0.5;

  /// Forces k = 0 for ZSL; throws ConfigError on invalid settings.
  RunConfig normalized() const;
  std::string name() const;
  nlohmann::json to_json() const;
};

struct Prediction {
  std::string sample_id;
  ParsedLabel predicted;
  Label gold = Label::Harmless;
  std::vector<std::string> exemplar_ids;
  std::string prompt_hash;
  std::int64_t latency_ms = 0;
  std::string error;  // set when the sample failed and was scored Unparseable
};

/// Harmful is the positive class. Unparseable predictions count toward the total
/// (and so lower accuracy) but toward none of tp/fp/fn/tn.
struct Metrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0, unparseable = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;

  std::size_t total() const { return tp + fp + fn + tn + unparseable; }
};

Metrics compute_metrics(std::span<const Prediction> predictions);
nlohmann::json metrics_to_json(const Metrics& m);

struct RunReport {
  nlohmann::json config;
  std::string run_name;
  std::vector<Prediction> predictions;
  Metrics metrics;
  std::string started_at;
  std::string finished_at;
  std::string artifact_version;
  std::string template_version;
};

struct RunDeps {
  ModelGateway* gateway = nullptr;
  EmbeddingStore* store = nullptr;
  const CorpusStats* stats = nullptr;  // built from the pool when absent or mismatched
  CaptionClient* captioner = nullptr;
  ModerationClient* moderation = nullptr;
};

/// Runs one configuration over the test corpus. Per-sample failures become
/// Unparseable predictions; configuration errors and pool/test id overlap throw.
RunReport run_experiment(const Corpus& pool, const Corpus& test, const RunConfig& cfg,
                         const RunDeps& deps);

nlohmann::json prediction_to_json(const Prediction& p);
Prediction prediction_from_json(const nlohmann::json& j);

/// Writes `report.summary` and `report.preds` into `dir`.
void emit_report(const RunReport& report, const std::filesystem::path& dir);
RunReport load_report(const std::filesystem::path& dir);

/// Aligned plain-text table, one row per report.
std::string comparison_table(std::span<const RunReport> reports);
/// Same rows as tab-separated values with a header line.
std::string comparison_tsv(std::span<const RunReport> reports);

}  // namespace harmicl

#endif  // HARMICL_EVALUATOR_HPP
