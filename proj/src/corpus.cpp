#include "harmicl/corpus.hpp"

#include <array>
#include <cctype>
#include <fstream>
#include <unordered_set>
#include <utility>

#include "harmicl/util.hpp"

namespace harmicl {
namespace {

constexpr std::array<std::pair<HarmCategory, std::string_view>, 6> kCategoryNames{{
    {HarmCategory::Information, "Information"},
    {HarmCategory::HateAndHarassment, "HateAndHarassment"},
    {HarmCategory::Addictive, "Addictive"},
    {HarmCategory::Clickbait, "Clickbait"},
    {HarmCategory::Sexual, "Sexual"},
    {HarmCategory::Physical, "Physical"},
}};

bool is_edge_punct(unsigned char c) { return std::ispunct(c) != 0; }

const nlohmann::json& require_string(const nlohmann::json& record, const char* key,
                                     std::size_t line) {
  auto it = record.find(key);
  if (it == record.end()) throw CorpusError(std::string("missing field \"") + key + "\"", line);
  if (!it->is_string()) throw CorpusError(std::string("field \"") + key + "\" must be a string", line);
  return *it;
}

std::optional<std::string> optional_string(const nlohmann::json& record, const char* key,
                                           std::size_t line) {
  auto it = record.find(key);
  if (it == record.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw CorpusError(std::string("field \"") + key + "\" must be a string", line);
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(Label label) {
  return label == Label::Harmful ? "Harmful" : "Harmless";
}

std::optional<Label> parse_label_name(std::string_view name) {
  if (name == "Harmful") return Label::Harmful;
  if (name == "Harmless") return Label::Harmless;
  return std::nullopt;
}

std::string_view to_string(HarmCategory category) {
  for (const auto& [c, name] : kCategoryNames)
    if (c == category) return name;
  return "?";
}

std::optional<HarmCategory> parse_category_name(std::string_view name) {
  for (const auto& [c, n] : kCategoryNames)
    if (n == name) return c;
  return std::nullopt;
}

Corpus::Corpus(std::vector<ContentSample> samples, SplitTag split)
    : samples_(std::move(samples)), split_(split) {
  index_.reserve(samples_.size());
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (s.id.empty()) throw CorpusError("empty id", i + 1);
    if (s.title.empty()) throw CorpusError("empty title for id \"" + s.id + "\"", i + 1);
    if (!s.categories.empty() && s.gold_label != Label::Harmful)
      throw CorpusError("categories given for non-harmful sample \"" + s.id + "\"", i + 1);
    if (split_ == SplitTag::Pool && !s.gold_label)
      throw CorpusError("pool sample \"" + s.id + "\" has no label", i + 1);
    if (!index_.emplace(s.id, i).second) throw CorpusError("duplicate id \"" + s.id + "\"", i + 1);
  }
}

const ContentSample* Corpus::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &samples_[it->second];
}

ContentSample sample_from_json(const nlohmann::json& record, std::size_t line) {
  if (!record.is_object()) throw CorpusError("record is not an object", line);
  ContentSample s;
  s.id = require_string(record, "id", line).get<std::string>();
  if (s.id.empty()) throw CorpusError("empty id", line);
  s.title = require_string(record, "title", line).get<std::string>();
  if (s.title.empty()) throw CorpusError("empty title for id \"" + s.id + "\"", line);
  s.caption = optional_string(record, "caption", line);
  s.image_ref = optional_string(record, "image_ref", line);
  if (auto label = optional_string(record, "label", line)) {
    s.gold_label = parse_label_name(*label);
    if (!s.gold_label) throw CorpusError("unknown label \"" + *label + "\"", line);
  }
  if (auto it = record.find("categories"); it != record.end() && !it->is_null()) {
    if (!it->is_array()) throw CorpusError("field \"categories\" must be an array", line);
    for (const auto& c : *it) {
      if (!c.is_string()) throw CorpusError("category must be a string", line);
      auto cat = parse_category_name(c.get<std::string>());
      if (!cat) throw CorpusError("unknown category \"" + c.get<std::string>() + "\"", line);
      s.categories.push_back(*cat);
    }
  }
  for (const auto& [key, value] : record.items()) {
    if (key != "id" && key != "title" && key != "caption" && key != "image_ref" && key != "label" &&
        key != "categories")
      s.extra[key] = value;
  }
  return s;
}

nlohmann::json sample_to_json(const ContentSample& s) {
  nlohmann::json j = s.extra.is_object() ? s.extra : nlohmann::json::object();
  j["id"] = s.id;
  j["title"] = s.title;
  if (s.caption) j["caption"] = *s.caption;
  if (s.image_ref) j["image_ref"] = *s.image_ref;
  if (s.gold_label) j["label"] = to_string(*s.gold_label);
  if (!s.categories.empty()) {
    auto& cats = j["categories"] = nlohmann::json::array();
    for (auto c : s.categories) cats.push_back(to_string(c));
  }
  return j;
}

Corpus load_corpus(const std::filesystem::path& path, SplitTag split) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file: " + path.string());
  std::vector<ContentSample> samples;
  std::unordered_set<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorpusError(std::string("malformed record: ") + e.what(), line);
    }
    auto sample = sample_from_json(record, line);
    if (sample.id.empty()) throw CorpusError("empty id", line);
    if (sample.title.empty()) throw CorpusError("empty title", line);
    if (!seen.insert(sample.id).second) throw CorpusError("duplicate id \"" + sample.id + "\"", line);
    if (split == SplitTag::Pool && !sample.gold_label)
      throw CorpusError("pool sample \"" + sample.id + "\" has no label", line);
    if (!sample.categories.empty() && sample.gold_label != Label::Harmful)
      throw CorpusError("categories given for non-harmful sample \"" + sample.id + "\"", line);
    samples.push_back(std::move(sample));
  }
  return Corpus(std::move(samples), split);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::string out;
  for (const auto& s : corpus.samples()) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  write_file(path, out);
}

std::vector<std::string> word_tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && is_edge_punct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && is_edge_punct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) words.push_back(to_lower(text.substr(b, e - b)));
    i = j;
  }
  return words;
}

std::vector<std::string> ngram_tokenize(std::string_view text, int n) {
  if (n < 1) throw std::invalid_argument("ngram size must be >= 1");
  const auto words = word_tokenize(text);
  std::vector<std::string> grams;
  if (words.empty()) return grams;
  const auto width = static_cast<std::size_t>(n);
  auto join = [&](std::size_t from, std::size_t count) {
    std::string g = words[from];
    for (std::size_t k = 1; k < count; ++k) (g += ' ') += words[from + k];
    return g;
  };
  if (words.size() < width) {
    grams.push_back(join(0, words.size()));
    return grams;
  }
  grams.reserve(words.size() - width + 1);
  for (std::size_t i = 0; i + width <= words.size(); ++i) grams.push_back(join(i, width));
  return grams;
}

CorpusStats build_corpus_stats(const Corpus& pool, int n) {
  if (pool.empty()) throw CorpusError("cannot build statistics over an empty pool");
  CorpusStats stats;
  stats.ngram_size = n;
  stats.doc_count = pool.size();
  std::size_t total = 0;
  for (const auto& s : pool.samples()) {
    auto grams = ngram_tokenize(s.title, n);
    total += grams.size();
    std::unordered_set<std::string> unique(grams.begin(), grams.end());
    for (auto& g : unique) ++stats.doc_freq[g];
  }
  stats.avg_doc_len = static_cast<double>(total) / static_cast<double>(stats.doc_count);
  if (!(stats.avg_doc_len > 0.0)) throw CorpusError("pool titles produce no n-grams");
  return stats;
}

}  // namespace harmicl
