#include "pagectx/recurrence.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <thread>
#include <unordered_map>

#include "pagectx/error.hpp"
#include "pagectx/random.hpp"

namespace pagectx {

using nlohmann::json;

PrevPageContext PrevPageContext::previous(LabelSet labels) {
  if (labels.empty()) throw Error("previous-page context needs at least one label");
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  PrevPageContext c;
  c.labels_ = std::move(labels);
  return c;
}

std::vector<std::string> PrevPageContext::tokens(const TypeVocabulary& vocabulary) const {
  if (is_first_page()) return {std::string(TypeVocabulary::first_page_token)};
  std::vector<std::string> out;
  for (auto c : labels_) out.push_back(vocabulary.special_token(c));
  return out;
}

PrevPageContext PrevPageContext::from_tokens(const std::vector<std::string>& tokens, const TypeVocabulary& vocabulary) {
  if (tokens.size() == 1 && tokens.front() == TypeVocabulary::first_page_token) return first_page();
  LabelSet labels;
  for (const auto& t : tokens) {
    std::optional<std::size_t> found;
    for (std::size_t c = 0; c < vocabulary.size() && !found; ++c)
      if (vocabulary.special_token(c) == t) found = c;
    if (!found) throw FormatError("unknown context token \"" + t + "\"");
    labels.push_back(*found);
  }
  return previous(std::move(labels));
}

namespace {

void append_text(TokenSequence& seq, std::string_view text, const InputVocabulary& vocab, std::size_t max_len) {
  for (const auto& tok : tokenize(text)) {
    if (seq.ids.size() >= max_len) break;
    seq.ids.push_back(vocab.text_token(tok));
  }
}

}  // namespace

TokenSequence plain_input(std::string_view text, const InputVocabulary& vocab, std::size_t max_len) {
  if (max_len < 1) throw Error("max_len must be positive");
  TokenSequence seq;
  seq.ids.push_back(InputVocabulary::kCls);
  append_text(seq, text, vocab, max_len);
  return seq;
}

TokenSequence augment_input(const PrevPageContext& context, std::string_view text, const InputVocabulary& vocab,
                            std::size_t max_len) {
  TokenSequence seq;
  seq.ids.push_back(InputVocabulary::kCls);
  if (context.is_first_page()) {
    seq.ids.push_back(InputVocabulary::kFirstPage);
  } else {
    for (auto c : context.labels()) seq.ids.push_back(vocab.class_token(c));
  }
  if (seq.ids.size() > max_len)
    throw Error("max_len " + std::to_string(max_len) + " cannot hold CLS plus the context tokens");
  append_text(seq, text, vocab, max_len);
  return seq;
}

PageExamples teacher_forced_examples(const std::vector<DocumentSequence>& docs, const InputVocabulary& vocab,
                                     std::size_t max_len) {
  PageExamples out;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& pages = docs[d].pages;
    for (std::size_t t = 0; t < pages.size(); ++t) {
      auto ctx = t == 0 ? PrevPageContext::first_page() : PrevPageContext::previous(pages[t - 1].gold_labels);
      out.examples.push_back({augment_input(ctx, pages[t].text, vocab, max_len), pages[t].gold_labels});
      out.contexts.emplace_back(std::move(ctx));
      out.origin.emplace_back(d, t);
    }
  }
  return out;
}

PageExamples page_examples(const std::vector<DocumentSequence>& docs, const InputVocabulary& vocab,
                           std::size_t max_len) {
  PageExamples out;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& pages = docs[d].pages;
    for (std::size_t t = 0; t < pages.size(); ++t) {
      out.examples.push_back({plain_input(pages[t].text, vocab, max_len), pages[t].gold_labels});
      out.contexts.emplace_back(std::nullopt);
      out.origin.emplace_back(d, t);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n_examples, std::size_t batch_size, Rng& rng) {
  if (batch_size < 1) throw Error("batch_size must be at least 1");
  std::vector<std::size_t> order(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n_examples; start += batch_size) {
    const auto end = std::min(n_examples, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::vector<TrainingExample>> build_teacher_forced_batches(const std::vector<DocumentSequence>& docs,
                                                                       const InputVocabulary& vocab,
                                                                       std::size_t max_len, std::size_t batch_size,
                                                                       Rng& rng) {
  auto examples = teacher_forced_examples(docs, vocab, max_len);
  std::vector<std::vector<TrainingExample>> out;
  for (const auto& batch : shuffled_batches(examples.size(), batch_size, rng)) {
    auto& b = out.emplace_back();
    b.reserve(batch.size());
    for (auto i : batch) b.push_back({examples.examples[i], *examples.contexts[i]});
  }
  return out;
}

// ---------------------------------------------------------------------------

PredictionTrace infer_document(const PageScorer& scorer, const InputVocabulary& vocab, std::size_t max_len,
                               const DocumentSequence& doc, LabelMode mode) {
  PredictionTrace trace;
  trace.doc_id = doc.doc_id;
  trace.steps.reserve(doc.pages.size());
  auto context = PrevPageContext::first_page();
  for (const auto& page : doc.pages) {
    TraceStep step;
    step.page_index = page.page_index;
    step.scores = scorer(augment_input(context, page.text, vocab, max_len));
    step.labels = predict(step.scores, mode);
    step.context = context;
    context = PrevPageContext::previous(step.labels);
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

PredictionTrace infer_document(const Encoder& encoder, const InputVocabulary& vocab, const DocumentSequence& doc,
                               LabelMode mode) {
  return infer_document([&](const TokenSequence& s) { return encoder.forward(s); }, vocab, encoder.config().max_len,
                        doc, mode);
}

PredictionTrace infer_context_oblivious(const PageScorer& scorer, const InputVocabulary& vocab, std::size_t max_len,
                                        const DocumentSequence& doc, LabelMode mode) {
  PredictionTrace trace;
  trace.doc_id = doc.doc_id;
  trace.steps.reserve(doc.pages.size());
  for (const auto& page : doc.pages) {
    TraceStep step;
    step.page_index = page.page_index;
    step.scores = scorer(plain_input(page.text, vocab, max_len));
    step.labels = predict(step.scores, mode);
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

PredictionTrace infer_context_oblivious(const Encoder& encoder, const InputVocabulary& vocab,
                                        const DocumentSequence& doc, LabelMode mode) {
  return infer_context_oblivious([&](const TokenSequence& s) { return encoder.forward(s); }, vocab,
                                 encoder.config().max_len, doc, mode);
}

std::vector<PredictionTrace> infer_corpus(const Encoder& encoder, const InputVocabulary& vocab,
                                          const std::vector<DocumentSequence>& docs, LabelMode mode, bool recurrent,
                                          std::size_t threads) {
  std::vector<PredictionTrace> out(docs.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t d = begin; d < docs.size(); d += stride)
      out[d] = recurrent ? infer_document(encoder, vocab, docs[d], mode)
                         : infer_context_oblivious(encoder, vocab, docs[d], mode);
  };
  threads = std::max<std::size_t>(1, std::min(threads, docs.size()));
  if (threads == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
  pool.clear();  // joins
  return out;
}

std::vector<LabelSet> decided_labels(const std::vector<PredictionTrace>& traces) {
  std::vector<LabelSet> out;
  for (const auto& t : traces)
    for (const auto& s : t.steps) out.push_back(s.labels);
  return out;
}

std::vector<LabelSet> gold_labels(const std::vector<DocumentSequence>& docs) {
  std::vector<LabelSet> out;
  for (const auto& d : docs)
    for (const auto& p : d.pages) out.push_back(p.gold_labels);
  return out;
}

// ---------------------------------------------------------------------------

void write_traces(std::ostream& out, const std::vector<PredictionTrace>& traces, const TypeVocabulary& vocabulary,
                  const json& provenance) {
  if (!provenance.is_null()) out << json{{"_provenance", provenance}}.dump() << '\n';
  for (const auto& trace : traces) {
    for (const auto& s : trace.steps) {
      json labels = json::array();
      for (auto c : s.labels) labels.push_back(vocabulary.name(c));
      json j = {{"doc_id", trace.doc_id},
                {"page_index", s.page_index},
                {"scores", std::vector<double>(s.scores.data(), s.scores.data() + s.scores.size())},
                {"labels", labels},
                {"context", s.context ? json(s.context->tokens(vocabulary)) : json(nullptr)}};
      out << j.dump() << '\n';
    }
  }
}

std::vector<PredictionTrace> read_traces(std::istream& in, const TypeVocabulary& vocabulary) {
  std::vector<PredictionTrace> traces;
  std::unordered_map<std::string, std::size_t> slot;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      if (j.contains("_provenance")) continue;
      TraceStep step;
      const auto doc_id = j.at("doc_id").get<std::string>();
      step.page_index = j.at("page_index").get<std::size_t>();
      const auto scores = j.at("scores").get<std::vector<double>>();
      if (scores.size() != vocabulary.size()) throw FormatError("score vector has the wrong length", line_no);
      step.scores = Eigen::Map<const Eigen::VectorXd>(scores.data(), static_cast<Eigen::Index>(scores.size()));
      for (const auto& name : j.at("labels").get<std::vector<std::string>>()) {
        auto c = vocabulary.index_of(name);
        if (!c) throw FormatError("unknown label \"" + name + "\"", line_no);
        step.labels.push_back(*c);
      }
      std::sort(step.labels.begin(), step.labels.end());
      if (step.labels.empty()) throw FormatError("trace step has no labels", line_no);
      if (!j.at("context").is_null())
        step.context = PrevPageContext::from_tokens(j.at("context").get<std::vector<std::string>>(), vocabulary);
      auto [it, inserted] = slot.try_emplace(doc_id, traces.size());
      if (inserted) traces.push_back({doc_id, {}});
      auto& steps = traces[it->second].steps;
      if (step.page_index != steps.size())
        throw FormatError("trace for \"" + doc_id + "\" is not in page order", line_no);
      steps.push_back(std::move(step));
    } catch (const json::exception& e) {
      throw FormatError(std::string("bad trace line: ") + e.what(), line_no);
    } catch (const FormatError& e) {
      if (e.line) throw;
      throw FormatError(e.what(), line_no);
    }
  }
  return traces;
}

}  // namespace pagectx
