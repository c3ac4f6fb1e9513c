#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pagectx/corpus.hpp"
#include "pagectx/encoder.hpp"

namespace pagectx {

class Rng;

/// What the model is told about the previous page: either that there is none
/// (first page of a document) or the previous page's label set.
class PrevPageContext {
 public:
  static PrevPageContext first_page() { return PrevPageContext(); }
  /// Labels are sorted; must be non-empty.
  static PrevPageContext previous(LabelSet labels);

  bool is_first_page() const { return labels_.empty(); }
  const LabelSet& labels() const { return labels_; }

  /// Readable tokens, e.g. {"[-1]"} or {"[type_2]", "[type_5]"}.
  std::vector<std::string> tokens(const TypeVocabulary& vocabulary) const;
  static PrevPageContext from_tokens(const std::vector<std::string>& tokens, const TypeVocabulary& vocabulary);

  bool operator==(const PrevPageContext&) const = default;

 private:
  PrevPageContext() = default;
  LabelSet labels_;
};

/// [CLS] + text tokens, truncated from the right to max_len.
TokenSequence plain_input(std::string_view text, const InputVocabulary& vocab, std::size_t max_len);

/// [CLS] + context tokens + text tokens. Context tokens are the first-page
/// token or one page-type token per context class in ascending class order.
/// Only text is truncated (from the right) to keep the total within max_len.
TokenSequence augment_input(const PrevPageContext& context, std::string_view text, const InputVocabulary& vocab,
                            std::size_t max_len);

/// One example per page. `contexts[i]` is what was prepended to example i;
/// nullopt for context-oblivious examples.
struct PageExamples {
  std::vector<LabeledSequence> examples;
  std::vector<std::optional<PrevPageContext>> contexts;
  std::vector<std::pair<std::size_t, std::size_t>> origin;  // (document, page)

  std::size_t size() const { return examples.size(); }
};

/// Teacher forcing: page t > 1 is conditioned on the GOLD labels of page t-1.
PageExamples teacher_forced_examples(const std::vector<DocumentSequence>& docs, const InputVocabulary& vocab,
                                     std::size_t max_len);
/// Context-oblivious examples: every page scored from its own text.
PageExamples page_examples(const std::vector<DocumentSequence>& docs, const InputVocabulary& vocab,
                           std::size_t max_len);

/// Shuffles example indices and cuts them into consecutive batches; the last
/// batch holds the remainder.
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n_examples, std::size_t batch_size, Rng& rng);

struct TrainingExample {
  LabeledSequence example;
  PrevPageContext context;
};

std::vector<std::vector<TrainingExample>> build_teacher_forced_batches(const std::vector<DocumentSequence>& docs,
                                                                       const InputVocabulary& vocab,
                                                                       std::size_t max_len, std::size_t batch_size,
                                                                       Rng& rng);

struct TraceStep {
  std::size_t page_index = 0;
  ScoreVector scores;
  LabelSet labels;
  /// nullopt when the page was scored without context.
  std::optional<PrevPageContext> context;
};

struct PredictionTrace {
  std::string doc_id;
  std::vector<TraceStep> steps;

  std::size_t size() const { return steps.size(); }
};

using PageScorer = std::function<ScoreVector(const TokenSequence&)>;

/// Strictly sequential left-to-right inference: page 1 gets the first-page
/// token, page t > 1 gets the labels decided for page t-1. Calls `scorer`
/// exactly once per page, in page order.
PredictionTrace infer_document(const PageScorer& scorer, const InputVocabulary& vocab, std::size_t max_len,
                               const DocumentSequence& doc, LabelMode mode);
PredictionTrace infer_document(const Encoder& encoder, const InputVocabulary& vocab, const DocumentSequence& doc,
                               LabelMode mode);

/// Each page scored independently from its own text.
PredictionTrace infer_context_oblivious(const PageScorer& scorer, const InputVocabulary& vocab, std::size_t max_len,
                                        const DocumentSequence& doc, LabelMode mode);
PredictionTrace infer_context_oblivious(const Encoder& encoder, const InputVocabulary& vocab,
                                        const DocumentSequence& doc, LabelMode mode);

/// Runs inference over many documents (documents are independent and may be
/// processed concurrently; each document stays sequential).
std::vector<PredictionTrace> infer_corpus(const Encoder& encoder, const InputVocabulary& vocab,
                                          const std::vector<DocumentSequence>& docs, LabelMode mode,
                                          bool recurrent, std::size_t threads = 1);

/// Decided labels of every page, in trace order.
std::vector<LabelSet> decided_labels(const std::vector<PredictionTrace>& traces);
std::vector<LabelSet> gold_labels(const std::vector<DocumentSequence>& docs);

// Trace JSONL: one line per page,
//   {"doc_id", "page_index", "scores": [..], "labels": [names], "context": [tokens] | null}
void write_traces(std::ostream& out, const std::vector<PredictionTrace>& traces, const TypeVocabulary& vocabulary,
                  const nlohmann::json& provenance = nullptr);
std::vector<PredictionTrace> read_traces(std::istream& in, const TypeVocabulary& vocabulary);

}  // namespace pagectx
