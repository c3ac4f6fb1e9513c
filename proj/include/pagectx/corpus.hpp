#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace pagectx {

enum class LabelMode { multiclass, multilabel };

std::string_view to_string(LabelMode mode);
LabelMode parse_label_mode(std::string_view s);

/// Sorted, duplicate-free class indices (0-based).
using LabelSet = std::vector<std::size_t>;

/// The n page-type classes together with the tokens that encode them as
/// recurrent input.
class TypeVocabulary {
 public:
  static constexpr std::string_view first_page_token = "[-1]";

  TypeVocabulary() = default;
  TypeVocabulary(std::vector<std::string> class_names, LabelMode mode);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& class_names() const { return names_; }
  const std::string& name(std::size_t c) const { return names_.at(c); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  LabelMode label_mode() const { return mode_; }

  /// "[type_<k>]" with k the 1-based class number.
  std::string special_token(std::size_t c) const;

  bool operator==(const TypeVocabulary&) const = default;

 private:
  std::vector<std::string> names_;
  LabelMode mode_ = LabelMode::multiclass;
};

struct PageRecord {
  std::string doc_id;
  std::size_t page_index = 0;
  std::string text;
  LabelSet gold_labels;

  bool operator==(const PageRecord&) const = default;
};

struct DocumentSequence {
  std::string doc_id;
  std::vector<PageRecord> pages;

  std::size_t size() const { return pages.size(); }
  bool operator==(const DocumentSequence&) const = default;
};

struct CorpusSplit {
  std::vector<DocumentSequence> train;
  std::vector<DocumentSequence> validation;
  std::vector<DocumentSequence> test;
  TypeVocabulary vocabulary;

  const std::vector<DocumentSequence>& split(std::string_view name) const;
  bool operator==(const CorpusSplit&) const = default;
};

std::size_t page_count(const std::vector<DocumentSequence>& docs);

/// Checks the DocumentSequence / CorpusSplit invariants; throws FormatError.
void validate(const std::vector<DocumentSequence>& docs, const TypeVocabulary& vocabulary);
void validate(const CorpusSplit& split);

// ---------------------------------------------------------------------------
// JSONL ingestion. One page per line:
//   {"doc_id": str, "page_index": int, "text": str, "labels": [str, ...]}
// Lines holding a "_provenance" object are metadata and are skipped.

std::vector<DocumentSequence> read_documents(std::istream& in, const TypeVocabulary& vocabulary);
void write_documents(std::ostream& out, const std::vector<DocumentSequence>& docs,
                     const TypeVocabulary& vocabulary);

struct CorpusManifest {
  std::vector<std::string> class_names;
  LabelMode label_mode = LabelMode::multiclass;
  std::filesystem::path train, validation, test;

  nlohmann::json to_json() const;
  static CorpusManifest from_json(const nlohmann::json& j);
};

CorpusManifest read_manifest(const std::filesystem::path& manifest_path);

/// Loads the three splits named by a manifest. Relative split paths are
/// resolved against the manifest's directory. The manifest's class list must
/// match `vocabulary`.
CorpusSplit load_corpus(const std::filesystem::path& manifest_path, const TypeVocabulary& vocabulary);
CorpusSplit load_corpus(const std::filesystem::path& manifest_path);

/// Writes train.jsonl, validation.jsonl, test.jsonl and manifest.json into
/// `dir`. `provenance`, when non-null, is prepended to each file.
void write_corpus(const std::filesystem::path& dir, const CorpusSplit& split,
                  const nlohmann::json& provenance = nullptr);

// ---------------------------------------------------------------------------
// Synthetic Markov-chain documents.

struct SynthConfig {
  std::size_t n_classes = 4;
  std::vector<std::vector<double>> transition_matrix;
  std::vector<double> start_distribution;
  std::size_t min_pages_per_doc = 3;
  std::size_t max_pages_per_doc = 20;
  std::size_t class_vocab_size = 30;
  std::size_t shared_vocab_size = 200;
  double ambiguity = 0.5;
  std::size_t min_tokens_per_page = 4;
  std::size_t max_tokens_per_page = 12;
  std::size_t train_docs = 200;
  std::size_t validation_docs = 40;
  std::size_t test_docs = 80;
  std::uint64_t seed = 1;

  /// Self-probability p on the diagonal, (1-p)/(n-1) elsewhere, uniform start.
  static SynthConfig with_self_transition(std::size_t n_classes, double self_prob);

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

CorpusSplit generate_synthetic(const SynthConfig& cfg);

// ---------------------------------------------------------------------------
// Descriptive statistics.

struct ClassPageCounts {
  std::vector<std::size_t> train, validation, test;
};

/// Pages carrying each label; a multi-label page counts once for each label.
std::vector<std::size_t> class_page_counts(const std::vector<DocumentSequence>& docs, std::size_t n_classes);
ClassPageCounts class_page_counts(const CorpusSplit& split);

struct RunStats {
  double median_run = 0.0;  // 0 when the class never occurs
  std::size_t max_run = 0;
  std::size_t total_pages = 0;
  std::size_t runs = 0;
};

/// Per class, statistics of its maximal runs of consecutive pages within a
/// document. Requires single-label pages.
std::vector<RunStats> run_length_stats(const std::vector<DocumentSequence>& docs, std::size_t n_classes);

struct SelfTransitionStats {
  /// nullopt for classes that never appear on a page with a successor.
  std::vector<std::optional<double>> per_class;
  /// Mean over the defined per-class values.
  double macro_average = 0.0;
};

/// P(next page has class c | page has class c) estimated from adjacent pages.
SelfTransitionStats transition_self_prob(const std::vector<DocumentSequence>& docs, std::size_t n_classes);

}  // namespace pagectx
