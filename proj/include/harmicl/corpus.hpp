#ifndef HARMICL_CORPUS_HPP
#define HARMICL_CORPUS_HPP

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace harmicl {

enum class Label { Harmful, Harmless };

enum class HarmCategory { Information, HateAndHarassment, Addictive, Clickbait, Sexual, Physical };

std::string_view to_string(Label label);
std::optional<Label> parse_label_name(std::string_view name);

std::string_view to_string(HarmCategory category);
std::optional<HarmCategory> parse_category_name(std::string_view name);

struct ContentSample {
  std::string id;
  std::string title;
  std::optional<std::string> caption;
  std::optional<std::string> image_ref;
  std::optional<Label> gold_label;
  std::vector<HarmCategory> categories;
  // Fields present in the source record that the loader does not interpret.
  nlohmann::json extra = nlohmann::json::object();
};

enum class SplitTag { Pool, Test };

class CorpusError : public std::runtime_error {
 public:
  CorpusError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  // 1-based line number of the offending record, 0 when not tied to a line.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class Corpus {
 public:
  // Validates ids, titles, categories and, for Pool corpora, gold labels.
  Corpus(std::vector<ContentSample> samples, SplitTag split);

  const std::vector<ContentSample>& samples() const noexcept { return samples_; }
  SplitTag split() const noexcept { return split_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  const ContentSample* find(std::string_view id) const;

 private:
  std::vector<ContentSample> samples_;
  SplitTag split_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parses one dataset record. Throws CorpusError (with `line`) on schema violations.
ContentSample sample_from_json(const nlohmann::json& record, std::size_t line = 0);
nlohmann::json sample_to_json(const ContentSample& sample);

/// Reads a line-delimited dataset file. Blank lines are skipped; records keep file order.
Corpus load_corpus(const std::filesystem::path& path, SplitTag split);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Lowercased whitespace tokens with punctuation trimmed from both edges.
std::vector<std::string> word_tokenize(std::string_view text);

/// Contiguous word windows of size n. Texts shorter than n words yield a single
/// n-gram holding the whole sequence; empty text yields nothing.
std::vector<std::string> ngram_tokenize(std::string_view text, int n);

struct CorpusStats {
  std::size_t doc_count = 0;
  double avg_doc_len = 0.0;
  std::unordered_map<std::string, std::size_t> doc_freq;
  int ngram_size = 4;

  std::size_t df(const std::string& ngram) const {
    auto it = doc_freq.find(ngram);
    return it == doc_freq.end() ? 0 : it->second;
  }
};

CorpusStats build_corpus_stats(const Corpus& pool, int n);

}  // namespace harmicl

#endif  // HARMICL_CORPUS_HPP
