#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pagectx/corpus.hpp"

namespace pagectx {

/// Identifies the tokenization rule; persisted with every fitted model so a
/// model is never applied with a different rule.
inline constexpr std::string_view kTokenizerVersion = "pagectx-tokenizer/1 lower+unicode-ws+strip-punct";

/// Lowercases, splits on Unicode white space and strips leading/trailing
/// punctuation from each piece. Empty pieces are dropped. Input is UTF-8;
/// invalid bytes are passed through unchanged.
std::vector<std::string> tokenize(std::string_view text);

/// Bounded token vocabulary fitted on training pages.
class Vocabulary {
 public:
  static constexpr std::size_t kDefaultCap = 60000;

  Vocabulary() = default;

  /// Keeps the `cap` tokens with the highest collection frequency, ties broken
  /// by byte-wise lexicographic order. Ids follow that ranking.
  static Vocabulary fit(const std::vector<DocumentSequence>& train, std::size_t cap = kDefaultCap);
  static Vocabulary fit(const std::vector<std::vector<std::string>>& tokenized_pages,
                        std::size_t cap = kDefaultCap);

  std::size_t size() const { return tokens_.size(); }
  std::size_t cap() const { return cap_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  /// Returns size() for out-of-vocabulary tokens.
  std::size_t id(std::string_view token) const;
  bool contains(std::string_view token) const { return id(token) != size(); }
  std::size_t document_frequency(std::size_t id) const { return doc_freq_.at(id); }
  std::size_t collection_frequency(std::size_t id) const { return coll_freq_.at(id); }
  std::size_t training_pages() const { return training_pages_; }

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  void index();

  std::vector<std::string> tokens_;
  std::vector<std::size_t> doc_freq_;
  std::vector<std::size_t> coll_freq_;
  std::size_t cap_ = kDefaultCap;
  std::size_t training_pages_ = 0;
  std::unordered_map<std::string, std::size_t> ids_;
};

using SparseVector = Eigen::SparseVector<double>;
using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// idf(t) = ln((1 + N) / (1 + df(t))) + 1 over the N training pages; page
/// vectors are raw term counts times idf, L2-normalized unless all-zero.
class TfIdfModel {
 public:
  TfIdfModel() = default;
  explicit TfIdfModel(Vocabulary vocabulary);

  const Vocabulary& vocabulary() const { return vocab_; }
  const Eigen::VectorXd& idf() const { return idf_; }
  std::size_t dimension() const { return vocab_.size(); }

  SparseVector transform(std::string_view text) const;
  SparseVector transform_tokens(const std::vector<std::string>& tokens) const;
  /// One row per page.
  SparseRows transform_pages(const std::vector<DocumentSequence>& docs) const;

 private:
  Vocabulary vocab_;
  Eigen::VectorXd idf_;
};

struct SvdOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 500;
  std::uint64_t seed = 0x5eed;
};

/// Top-k right singular subspace of a page-by-term matrix.
class SvdProjector {
 public:
  SvdProjector() = default;
  SvdProjector(Eigen::MatrixXd basis, Eigen::VectorXd singular_values)
      : basis_(std::move(basis)), singular_values_(std::move(singular_values)) {}

  std::size_t rank() const { return static_cast<std::size_t>(basis_.cols()); }
  std::size_t input_dimension() const { return static_cast<std::size_t>(basis_.rows()); }
  /// V x k with orthonormal columns.
  const Eigen::MatrixXd& basis() const { return basis_; }
  const Eigen::VectorXd& singular_values() const { return singular_values_; }
  std::size_t iterations() const { return iterations_; }

  /// basis^T x
  Eigen::VectorXd project(const SparseVector& x) const;
  Eigen::VectorXd project(const Eigen::VectorXd& x) const;

 private:
  friend SvdProjector fit_svd(const SparseRows&, std::size_t, const SvdOptions&);
  Eigen::MatrixXd basis_;
  Eigen::VectorXd singular_values_;
  std::size_t iterations_ = 0;
};

/// Block power (subspace) iteration on A^T A with Rayleigh-Ritz extraction.
/// Converged once every one of the k singular values changes by at most
/// tolerance * sigma_1 between iterations. Throws ConvergenceError when the
/// iteration cap is hit first, and Error when k exceeds min(rows, cols).
SvdProjector fit_svd(const SparseRows& matrix, std::size_t k, const SvdOptions& options = {});

using PageVector = Eigen::VectorXd;

/// TF-IDF followed by the SVD projection: text -> k-dimensional page vector.
class PageFeaturizer {
 public:
  PageFeaturizer() = default;
  PageFeaturizer(TfIdfModel tfidf, SvdProjector svd);

  /// Fits vocabulary, idf and projection on the training documents only.
  static PageFeaturizer fit(const std::vector<DocumentSequence>& train, std::size_t vocab_cap,
                            std::size_t dimensions, const SvdOptions& options = {});

  const TfIdfModel& tfidf() const { return tfidf_; }
  const SvdProjector& svd() const { return svd_; }
  std::size_t dimension() const { return svd_.rank(); }

  PageVector encode(std::string_view text) const;
  std::vector<PageVector> encode(const DocumentSequence& doc) const;

  nlohmann::json to_json() const;
  static PageFeaturizer from_json(const nlohmann::json& j);

 private:
  TfIdfModel tfidf_;
  SvdProjector svd_;
};

}  // namespace pagectx
