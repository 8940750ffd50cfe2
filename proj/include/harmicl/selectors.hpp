#ifndef HARMICL_SELECTORS_HPP
#define HARMICL_SELECTORS_HPP

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "harmicl/corpus.hpp"
#include "harmicl/embedding.hpp"

namespace harmicl {

enum class SelectorKind { Cosine, BM25, BSR };
enum class SelectionMode { InstanceTopK, GreedyCoverage };
enum class OrderStrategy { ByInstanceScore, SelectionOrder };
// How a query n-gram counts as covered by a demonstration under BM25 coverage.
enum class Bm25Coverage { PerTerm, Binary };

std::string_view to_string(SelectorKind k);
std::string_view to_string(SelectionMode m);
std::optional<SelectorKind> parse_selector_kind(std::string_view s);
std::optional<SelectionMode> parse_selection_mode(std::string_view s);

class SelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SelectionConfig {
  SelectorKind selector = SelectorKind::BSR;
  int k = 8;
  SelectionMode mode = SelectionMode::GreedyCoverage;
  int ngram_size = 4;
  double bm25_k1 = 1.5;
  double bm25_b = 0.75;
  bool reorder = true;
  bool balanced = false;
  Bm25Coverage bm25_coverage = Bm25Coverage::PerTerm;

  // Throws SelectionError on k < 0, k1 <= 0, b outside [0, 1] or ngram_size < 1.
  void validate() const;
  // Cosine has no decomposable units and always runs top-k.
  SelectionMode effective_mode() const {
    return selector == SelectorKind::Cosine ? SelectionMode::InstanceTopK : mode;
  }
};

struct Exemplar {
  ContentSample sample;
  Label label;
  double instance_score = 0.0;
};

/// Prompt order: the first item is farthest from the test sample, the last one precedes it.
struct ExemplarSet {
  std::vector<Exemplar> items;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
  std::vector<std::string> ids() const;
};

struct SelectorDeps {
  const CorpusStats* stats = nullptr;  // required for BM25
  EmbeddingStore* store = nullptr;     // required for Cosine and BSR
};

// Okapi IDF with +1 inside the log; never negative.
double bm25_idf(const CorpusStats& stats, const std::string& ngram);

double score_bm25(const ContentSample& query, const ContentSample& candidate,
                  const CorpusStats& stats, const SelectionConfig& cfg);

/// Recall-only BERTScore without IDF weighting: sum over query tokens of the best
/// cosine against any candidate token.
template <typename Scalar>
Scalar score_bsr(const BasicTokenMatrix<Scalar>& query, const BasicTokenMatrix<Scalar>& candidate) {
  return token_cosines(query.vectors, candidate.vectors).rowwise().maxCoeff().sum();
}

double score_cosine(const ContentSample& query, const ContentSample& candidate,
                    EmbeddingStore& store);

/// Instance score of `candidate` under `cfg.selector`.
double instance_score(const ContentSample& query, const ContentSample& candidate,
                      const SelectionConfig& cfg, const SelectorDeps& deps);

/// Query units credited by coverage: n-grams (BM25, with multiplicity) or tokens (BSR).
std::vector<std::string> query_units(const ContentSample& query, const SelectionConfig& cfg,
                                     const SelectorDeps& deps);

/// Per-unit scores of one demonstration against the query's units.
Vector<double> unit_scores(const ContentSample& query, const ContentSample& candidate,
                           const SelectionConfig& cfg, const SelectorDeps& deps);

/// Set-level coverage: sum over query units of the best unit score among `members`.
double coverage(const ContentSample& query, std::span<const ContentSample> members,
                const SelectionConfig& cfg, const SelectorDeps& deps);

/// Cov(selected + candidate) - Cov(selected). Rejects the Cosine selector.
double coverage_gain(const ContentSample& query, const ExemplarSet& selected,
                     const ContentSample& candidate, const SelectionConfig& cfg,
                     const SelectorDeps& deps);

struct SelectionStep {
  std::string id;
  double gain = 0.0;  // coverage gain (greedy) or instance score (top-k)
  std::vector<std::size_t> newly_covered;  // indices into SelectionResult::query_units
};

struct SelectionResult {
  ExemplarSet exemplars;
  std::vector<std::string> query_units;
  std::vector<SelectionStep> steps;  // in pick order
  bool short_set = false;            // pool had fewer than k eligible candidates
  bool imbalanced = false;           // balanced requested but class supply ran out
};

/// Picks up to cfg.k demonstrations from `pool` for `query`. The query's own id is
/// never selected. Ties break by ascending sample id.
SelectionResult select_exemplars(const ContentSample& query, const Corpus& pool,
                                 const SelectionConfig& cfg, const SelectorDeps& deps);

/// ByInstanceScore sorts ascending (most similar last), stable on ties.
ExemplarSet reorder_exemplars(ExemplarSet set, OrderStrategy strategy);

/// One JSON object describing a selection: ids, scores, per-step gains and final order.
nlohmann::json selection_to_json(const ContentSample& query, const SelectionResult& result);

}  // namespace harmicl

#endif  // HARMICL_SELECTORS_HPP
