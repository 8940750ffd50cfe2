#ifndef HARMICL_EMBEDDING_HPP
#define HARMICL_EMBEDDING_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "harmicl/corpus.hpp"
#include "harmicl/transport.hpp"

namespace harmicl {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using SentenceVector = Vector<double>;

/// Token-level embeddings: row i of `vectors` embeds `tokens[i]`.
template <typename Scalar>
struct BasicTokenMatrix {
  std::vector<std::string> tokens;
  RowMatrix<Scalar> vectors;

  Eigen::Index size() const { return vectors.rows(); }
  Eigen::Index dim() const { return vectors.cols(); }
};

using TokenMatrix = BasicTokenMatrix<double>;

class EmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cosine of two dense vectors, clamped to [-1, 1].
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine(const Eigen::MatrixBase<DerivedA>& a,
                                 const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size())
    throw EmbeddingError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  const Scalar aa = a.dot(a);
  const Scalar bb = b.dot(b);
  if (aa == Scalar(0) || bb == Scalar(0)) throw EmbeddingError("cosine: zero-norm vector");
  // sqrt(x*x) == x in binary floating point, so identical inputs give exactly 1.
  const Scalar c = a.dot(b) / std::sqrt(aa * bb);
  return std::clamp(c, Scalar(-1), Scalar(1));
}

/// Pairwise token cosines: entry (i, j) is cosine(query row i, candidate row j).
template <typename DerivedQ, typename DerivedD>
RowMatrix<typename DerivedQ::Scalar> token_cosines(const Eigen::MatrixBase<DerivedQ>& query,
                                                   const Eigen::MatrixBase<DerivedD>& candidate) {
  using Scalar = typename DerivedQ::Scalar;
  if (query.rows() == 0 || candidate.rows() == 0) throw EmbeddingError("empty token matrix");
  if (query.cols() != candidate.cols())
    throw EmbeddingError("token dimension mismatch (" + std::to_string(query.cols()) + " vs " +
                         std::to_string(candidate.cols()) + ")");
  Vector<Scalar> qq(query.rows()), dd(candidate.rows());
  for (Eigen::Index i = 0; i < query.rows(); ++i) qq[i] = query.row(i).dot(query.row(i));
  for (Eigen::Index j = 0; j < candidate.rows(); ++j) dd[j] = candidate.row(j).dot(candidate.row(j));
  if ((qq.array() == Scalar(0)).any() || (dd.array() == Scalar(0)).any())
    throw EmbeddingError("zero-norm token vector");
  RowMatrix<Scalar> sims(query.rows(), candidate.rows());
  for (Eigen::Index i = 0; i < query.rows(); ++i)
    for (Eigen::Index j = 0; j < candidate.rows(); ++j)
      sims(i, j) = std::clamp(query.row(i).dot(candidate.row(j)) / std::sqrt(qq[i] * dd[j]),
                              Scalar(-1), Scalar(1));
  return sims;
}

/// Which text of a sample an embedding represents.
enum class TextField { Title, Caption, TitleAndCaption };

std::string text_of(const ContentSample& sample, TextField field);

struct EmbeddingProviderConfig {
  HttpEndpointConfig endpoint;
  std::string model;
  std::size_t batch_size = 32;
  RetryPolicy retry;
};

/// Sentence and token embeddings keyed by sample id. Embeddings are loaded from
/// cache files or fetched from an external service; this class never runs an encoder.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  // `transport` overrides the HTTP transport built from the provider config.
  explicit EmbeddingStore(EmbeddingProviderConfig provider,
                          std::shared_ptr<Transport> transport = nullptr);

  EmbeddingStore(const EmbeddingStore&) = delete;
  EmbeddingStore& operator=(const EmbeddingStore&) = delete;

  void load_sentence_cache(const std::filesystem::path& path);
  void load_token_cache(const std::filesystem::path& path);
  void save_sentence_cache(const std::filesystem::path& path) const;
  void save_token_cache(const std::filesystem::path& path) const;

  void put_sentence(const std::string& key, SentenceVector v);
  void put_tokens(const std::string& key, TokenMatrix m);

  SentenceVector sentence(const ContentSample& sample, TextField field = TextField::Title);
  std::shared_ptr<const TokenMatrix> token_matrix(const ContentSample& sample);

  // Batch-fetches every missing entry from the provider.
  void prefetch_sentences(std::span<const ContentSample> samples, TextField field = TextField::Title);
  void prefetch_tokens(std::span<const ContentSample> samples);

  bool has_provider() const noexcept { return static_cast<bool>(transport_); }
  std::size_t network_calls() const noexcept { return network_calls_.load(); }
  std::size_t sentence_count() const;
  std::size_t token_count() const;

  void set_sleeper(Sleeper s) { sleep_ = std::move(s); }
  void set_transcript(TranscriptLog* log) { transcript_ = log; }

  static std::string cache_key(const ContentSample& sample, TextField field);

 private:
  std::optional<SentenceVector> find_sentence(const std::string& key) const;
  std::shared_ptr<const TokenMatrix> find_tokens(const std::string& key) const;
  nlohmann::json call_provider(const std::vector<std::string>& texts, const char* granularity);
  void fetch_sentences(const std::vector<const ContentSample*>& missing, TextField field);
  void fetch_tokens(const std::vector<const ContentSample*>& missing);

  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, SentenceVector> sentences_;
  std::unordered_map<std::string, std::shared_ptr<const TokenMatrix>> tokens_;
  Eigen::Index sentence_dim_ = 0;
  Eigen::Index token_dim_ = 0;

  std::optional<EmbeddingProviderConfig> provider_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleep_ = real_sleeper();
  TranscriptLog* transcript_ = nullptr;
  std::atomic<std::size_t> network_calls_{0};
};

}  // namespace harmicl

#endif  // HARMICL_EMBEDDING_HPP
