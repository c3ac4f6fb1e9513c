#include "pagectx/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "pagectx/error.hpp"
#include "pagectx/random.hpp"

namespace pagectx {

using nlohmann::json;

std::string_view to_string(LabelMode mode) {
  return mode == LabelMode::multiclass ? "multiclass" : "multilabel";
}

LabelMode parse_label_mode(std::string_view s) {
  if (s == "multiclass") return LabelMode::multiclass;
  if (s == "multilabel") return LabelMode::multilabel;
  throw FormatError("label_mode must be \"multiclass\" or \"multilabel\", got \"" + std::string(s) + "\"");
}

TypeVocabulary::TypeVocabulary(std::vector<std::string> class_names, LabelMode mode)
    : names_(std::move(class_names)), mode_(mode) {
  if (names_.size() < 2) throw FormatError("a type vocabulary needs at least 2 classes");
  std::set<std::string_view> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw FormatError("class names must be non-empty");
    if (!seen.insert(n).second) throw FormatError("duplicate class name \"" + n + "\"");
  }
}

std::optional<std::size_t> TypeVocabulary::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

std::string TypeVocabulary::special_token(std::size_t c) const {
  if (c >= names_.size()) throw Error("class index out of range");
  return "[type_" + std::to_string(c + 1) + "]";
}

const std::vector<DocumentSequence>& CorpusSplit::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "validation") return validation;
  if (name == "test") return test;
  throw Error("unknown split \"" + std::string(name) + "\" (expected train, validation or test)");
}

std::size_t page_count(const std::vector<DocumentSequence>& docs) {
  std::size_t n = 0;
  for (const auto& d : docs) n += d.pages.size();
  return n;
}

void validate(const std::vector<DocumentSequence>& docs, const TypeVocabulary& vocabulary) {
  std::set<std::string_view> ids;
  for (const auto& doc : docs) {
    if (doc.pages.empty()) throw FormatError("document \"" + doc.doc_id + "\" is empty");
    if (!ids.insert(doc.doc_id).second) throw FormatError("duplicate doc_id \"" + doc.doc_id + "\"");
    for (std::size_t i = 0; i < doc.pages.size(); ++i) {
      const auto& p = doc.pages[i];
      if (p.doc_id != doc.doc_id || p.page_index != i)
        throw FormatError("document \"" + doc.doc_id + "\" pages are not indexed 0..l-1");
      if (p.gold_labels.empty())
        throw FormatError("document \"" + doc.doc_id + "\" page " + std::to_string(i) + " has no labels");
      if (vocabulary.label_mode() == LabelMode::multiclass && p.gold_labels.size() != 1)
        throw FormatError("document \"" + doc.doc_id + "\" page " + std::to_string(i) +
                          " has several labels in multiclass mode");
      if (!std::is_sorted(p.gold_labels.begin(), p.gold_labels.end()) ||
          std::adjacent_find(p.gold_labels.begin(), p.gold_labels.end()) != p.gold_labels.end())
        throw FormatError("label sets must be sorted and unique");
      if (p.gold_labels.back() >= vocabulary.size())
        throw FormatError("label index out of range in document \"" + doc.doc_id + "\"");
    }
  }
}

void validate(const CorpusSplit& split) {
  validate(split.train, split.vocabulary);
  validate(split.validation, split.vocabulary);
  validate(split.test, split.vocabulary);
}

// ---------------------------------------------------------------------------

std::vector<DocumentSequence> read_documents(std::istream& in, const TypeVocabulary& vocabulary) {
  std::vector<DocumentSequence> docs;
  std::unordered_map<std::string, std::size_t> doc_slot;
  // (doc slot, page_index) -> source line, for duplicate detection.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw FormatError("expected a JSON object", line_no);
    if (j.contains("_provenance")) continue;

    PageRecord page;
    try {
      page.doc_id = j.at("doc_id").get<std::string>();
      const auto& idx = j.at("page_index");
      if (!idx.is_number_integer() || idx.get<long long>() < 0)
        throw FormatError("page_index must be a non-negative integer", line_no);
      page.page_index = idx.get<std::size_t>();
      page.text = j.at("text").get<std::string>();
      const auto& labels = j.at("labels");
      if (!labels.is_array()) throw FormatError("labels must be an array", line_no);
      for (const auto& l : labels) {
        auto name = l.get<std::string>();
        auto c = vocabulary.index_of(name);
        if (!c) throw FormatError("unknown label \"" + name + "\"", line_no);
        page.gold_labels.push_back(*c);
      }
    } catch (const json::exception& e) {
      throw FormatError(std::string("bad page record: ") + e.what(), line_no);
    }
    if (j.size() != 4) throw FormatError("unexpected keys in page record", line_no);
    if (page.gold_labels.empty()) throw FormatError("page has no labels", line_no);
    std::sort(page.gold_labels.begin(), page.gold_labels.end());
    if (std::adjacent_find(page.gold_labels.begin(), page.gold_labels.end()) != page.gold_labels.end())
      throw FormatError("duplicate label on page", line_no);
    if (vocabulary.label_mode() == LabelMode::multiclass && page.gold_labels.size() != 1)
      throw FormatError("multiclass corpus page carries " + std::to_string(page.gold_labels.size()) + " labels",
                        line_no);

    auto [it, inserted] = doc_slot.try_emplace(page.doc_id, docs.size());
    if (inserted) docs.push_back(DocumentSequence{page.doc_id, {}});
    auto [prev, fresh] = seen.try_emplace({it->second, page.page_index}, line_no);
    if (!fresh)
      throw FormatError("duplicate page (\"" + page.doc_id + "\", " + std::to_string(page.page_index) +
                            "), first seen on line " + std::to_string(prev->second),
                        line_no);
    docs[it->second].pages.push_back(std::move(page));
  }

  for (auto& doc : docs) {
    std::stable_sort(doc.pages.begin(), doc.pages.end(),
                     [](const PageRecord& a, const PageRecord& b) { return a.page_index < b.page_index; });
    for (std::size_t i = 0; i < doc.pages.size(); ++i) {
      if (doc.pages[i].page_index != i)
        throw FormatError("document \"" + doc.doc_id + "\" is missing page " + std::to_string(i));
    }
  }
  return docs;
}

void write_documents(std::ostream& out, const std::vector<DocumentSequence>& docs,
                     const TypeVocabulary& vocabulary) {
  for (const auto& doc : docs) {
    for (const auto& p : doc.pages) {
      json labels = json::array();
      for (auto c : p.gold_labels) labels.push_back(vocabulary.name(c));
      json j = {{"doc_id", p.doc_id}, {"page_index", p.page_index}, {"text", p.text}, {"labels", labels}};
      out << j.dump() << '\n';
    }
  }
}

json CorpusManifest::to_json() const {
  return {{"format", "pagectx-corpus/1"},
          {"classes", class_names},
          {"label_mode", std::string(to_string(label_mode))},
          {"train", train.generic_string()},
          {"validation", validation.generic_string()},
          {"test", test.generic_string()}};
}

CorpusManifest CorpusManifest::from_json(const json& j) {
  CorpusManifest m;
  try {
    if (j.at("format").get<std::string>() != "pagectx-corpus/1")
      throw FormatError("unsupported corpus manifest format");
    m.class_names = j.at("classes").get<std::vector<std::string>>();
    m.label_mode = parse_label_mode(j.at("label_mode").get<std::string>());
    m.train = j.at("train").get<std::string>();
    m.validation = j.at("validation").get<std::string>();
    m.test = j.at("test").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad corpus manifest: ") + e.what());
  }
  return m;
}

CorpusManifest read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error("cannot open manifest " + manifest_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("manifest " + manifest_path.string() + ": " + e.what());
  }
  auto m = CorpusManifest::from_json(j);
  const auto base = manifest_path.parent_path();
  for (auto* p : {&m.train, &m.validation, &m.test})
    if (p->is_relative()) *p = base / *p;
  return m;
}

namespace {

std::vector<DocumentSequence> load_split_file(const std::filesystem::path& path, const TypeVocabulary& vocabulary) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return read_documents(in, vocabulary);
  } catch (const FormatError& e) {
    throw FormatError(path.filename().string() + ": " + e.what());
  }
}

}  // namespace

CorpusSplit load_corpus(const std::filesystem::path& manifest_path, const TypeVocabulary& vocabulary) {
  auto m = read_manifest(manifest_path);
  if (m.class_names != vocabulary.class_names() || m.label_mode != vocabulary.label_mode())
    throw FormatError("manifest classes do not match the expected type vocabulary");
  CorpusSplit split;
  split.vocabulary = vocabulary;
  split.train = load_split_file(m.train, vocabulary);
  split.validation = load_split_file(m.validation, vocabulary);
  split.test = load_split_file(m.test, vocabulary);
  validate(split);
  return split;
}

CorpusSplit load_corpus(const std::filesystem::path& manifest_path) {
  auto m = read_manifest(manifest_path);
  return load_corpus(manifest_path, TypeVocabulary(m.class_names, m.label_mode));
}

void write_corpus(const std::filesystem::path& dir, const CorpusSplit& split, const json& provenance) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const std::vector<DocumentSequence>*> parts[] = {
      {"train.jsonl", &split.train}, {"validation.jsonl", &split.validation}, {"test.jsonl", &split.test}};
  for (const auto& [file, docs] : parts) {
    std::ofstream out(dir / file, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / file).string());
    if (!provenance.is_null()) out << json{{"_provenance", provenance}}.dump() << '\n';
    write_documents(out, *docs, split.vocabulary);
  }
  CorpusManifest m{split.vocabulary.class_names(), split.vocabulary.label_mode(), "train.jsonl", "validation.jsonl",
                   "test.jsonl"};
  json mj = m.to_json();
  if (!provenance.is_null()) mj["provenance"] = provenance;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << mj.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

SynthConfig SynthConfig::with_self_transition(std::size_t n_classes, double self_prob) {
  SynthConfig cfg;
  cfg.n_classes = n_classes;
  const double off = n_classes > 1 ? (1.0 - self_prob) / static_cast<double>(n_classes - 1) : 0.0;
  cfg.transition_matrix.assign(n_classes, std::vector<double>(n_classes, off));
  for (std::size_t i = 0; i < n_classes; ++i) cfg.transition_matrix[i][i] = self_prob;
  cfg.start_distribution.assign(n_classes, 1.0 / static_cast<double>(n_classes));
  return cfg;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw FormatError(field + ": " + why); };
  if (n_classes < 2) fail("n_classes", "must be at least 2");
  if (transition_matrix.size() != n_classes) fail("transition_matrix", "must have n_classes rows");
  for (std::size_t i = 0; i < n_classes; ++i) {
    const auto& row = transition_matrix[i];
    if (row.size() != n_classes) fail("transition_matrix", "row " + std::to_string(i) + " has the wrong length");
    double s = 0.0;
    for (double p : row) {
      if (!(p >= 0.0) || !std::isfinite(p)) fail("transition_matrix", "entries must be non-negative");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) fail("transition_matrix", "row " + std::to_string(i) + " does not sum to 1");
  }
  if (start_distribution.size() != n_classes) fail("start_distribution", "must have n_classes entries");
  double s = 0.0;
  for (double p : start_distribution) {
    if (!(p >= 0.0) || !std::isfinite(p)) fail("start_distribution", "entries must be non-negative");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) fail("start_distribution", "does not sum to 1");
  if (!(ambiguity >= 0.0 && ambiguity <= 1.0)) fail("ambiguity", "must lie in [0, 1]");
  if (min_pages_per_doc < 1 || max_pages_per_doc < min_pages_per_doc)
    fail("pages_per_doc", "need 1 <= min <= max");
  if (min_tokens_per_page < 1 || max_tokens_per_page < min_tokens_per_page)
    fail("tokens_per_page", "need 1 <= min <= max");
  if (class_vocab_size < 1) fail("class_vocab_size", "must be at least 1");
  if (shared_vocab_size < 1) fail("shared_vocab_size", "must be at least 1");
}

json SynthConfig::to_json() const {
  return {{"n_classes", n_classes},
          {"transition_matrix", transition_matrix},
          {"start_distribution", start_distribution},
          {"pages_per_doc", {min_pages_per_doc, max_pages_per_doc}},
          {"class_vocab_size", class_vocab_size},
          {"shared_vocab_size", shared_vocab_size},
          {"ambiguity", ambiguity},
          {"tokens_per_page", {min_tokens_per_page, max_tokens_per_page}},
          {"docs", {{"train", train_docs}, {"validation", validation_docs}, {"test", test_docs}}},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig cfg;
  static const std::set<std::string> known = {"n_classes",       "transition_matrix", "start_distribution",
                                               "self_transition", "pages_per_doc",     "class_vocab_size",
                                               "shared_vocab_size", "ambiguity",       "tokens_per_page",
                                               "docs",            "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw FormatError("synthetic." + key + ": unknown field");
  auto field = [&](const char* name, auto& dst) {
    if (!j.contains(name)) return;
    try {
      j.at(name).get_to(dst);
    } catch (const json::exception& e) {
      throw FormatError(std::string("synthetic.") + name + ": " + e.what());
    }
  };
  field("n_classes", cfg.n_classes);
  if (j.contains("self_transition")) {
    if (j.contains("transition_matrix"))
      throw FormatError("synthetic.self_transition: give either self_transition or transition_matrix");
    double p = 0.0;
    field("self_transition", p);
    if (!(p >= 0.0 && p <= 1.0)) throw FormatError("synthetic.self_transition: must lie in [0, 1]");
    auto base = with_self_transition(cfg.n_classes, p);
    cfg.transition_matrix = base.transition_matrix;
    cfg.start_distribution = base.start_distribution;
  }
  field("transition_matrix", cfg.transition_matrix);
  field("start_distribution", cfg.start_distribution);
  if (cfg.start_distribution.empty())
    cfg.start_distribution.assign(cfg.n_classes, 1.0 / static_cast<double>(cfg.n_classes));
  auto range = [&](const char* name, std::size_t& lo, std::size_t& hi) {
    if (!j.contains(name)) return;
    std::vector<std::size_t> v;
    field(name, v);
    if (v.size() != 2) throw FormatError(std::string("synthetic.") + name + ": expected [min, max]");
    lo = v[0];
    hi = v[1];
  };
  range("pages_per_doc", cfg.min_pages_per_doc, cfg.max_pages_per_doc);
  range("tokens_per_page", cfg.min_tokens_per_page, cfg.max_tokens_per_page);
  field("class_vocab_size", cfg.class_vocab_size);
  field("shared_vocab_size", cfg.shared_vocab_size);
  field("ambiguity", cfg.ambiguity);
  field("seed", cfg.seed);
  if (j.contains("docs")) {
    const auto& d = j.at("docs");
    try {
      if (d.contains("train")) d.at("train").get_to(cfg.train_docs);
      if (d.contains("validation")) d.at("validation").get_to(cfg.validation_docs);
      if (d.contains("test")) d.at("test").get_to(cfg.test_docs);
    } catch (const json::exception& e) {
      throw FormatError(std::string("synthetic.docs: ") + e.what());
    }
  }
  if (cfg.transition_matrix.empty()) {
    auto base = with_self_transition(cfg.n_classes, 1.0 / static_cast<double>(cfg.n_classes));
    cfg.transition_matrix = base.transition_matrix;
  }
  cfg.validate();
  return cfg;
}

namespace {

std::vector<DocumentSequence> generate_docs(const SynthConfig& cfg, std::size_t count, std::string_view prefix,
                                            Rng& rng) {
  std::vector<DocumentSequence> docs;
  docs.reserve(count);
  for (std::size_t d = 0; d < count; ++d) {
    DocumentSequence doc;
    std::string num = std::to_string(d);
    doc.doc_id = std::string(prefix) + "-" + std::string(num.size() < 5 ? 5 - num.size() : 0, '0') + num;
    const auto length = rng.between(cfg.min_pages_per_doc, cfg.max_pages_per_doc);
    std::size_t cls = rng.categorical(cfg.start_distribution);
    for (std::size_t t = 0; t < length; ++t) {
      if (t > 0) cls = rng.categorical(cfg.transition_matrix[cls]);
      PageRecord page;
      page.doc_id = doc.doc_id;
      page.page_index = t;
      page.gold_labels = {cls};
      const auto m = rng.between(cfg.min_tokens_per_page, cfg.max_tokens_per_page);
      for (std::size_t k = 0; k < m; ++k) {
        if (k) page.text += ' ';
        if (rng.uniform() < cfg.ambiguity)
          page.text += "sh_w" + std::to_string(rng.below(cfg.shared_vocab_size));
        else
          page.text += "c" + std::to_string(cls + 1) + "_w" + std::to_string(rng.below(cfg.class_vocab_size));
      }
      doc.pages.push_back(std::move(page));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace

CorpusSplit generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) names.push_back("c" + std::to_string(c + 1));
  CorpusSplit split;
  split.vocabulary = TypeVocabulary(std::move(names), LabelMode::multiclass);
  Rng rng(cfg.seed);
  split.train = generate_docs(cfg, cfg.train_docs, "train", rng);
  split.validation = generate_docs(cfg, cfg.validation_docs, "validation", rng);
  split.test = generate_docs(cfg, cfg.test_docs, "test", rng);
  return split;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> class_page_counts(const std::vector<DocumentSequence>& docs, std::size_t n_classes) {
  std::vector<std::size_t> counts(n_classes, 0);
  for (const auto& doc : docs)
    for (const auto& p : doc.pages)
      for (auto c : p.gold_labels) counts.at(c)++;
  return counts;
}

ClassPageCounts class_page_counts(const CorpusSplit& split) {
  const auto n = split.vocabulary.size();
  return {class_page_counts(split.train, n), class_page_counts(split.validation, n),
          class_page_counts(split.test, n)};
}

namespace {

std::size_t single_label(const PageRecord& p) {
  if (p.gold_labels.size() != 1)
    throw Error("run and transition statistics require single-label pages (document \"" + p.doc_id + "\")");
  return p.gold_labels.front();
}

}  // namespace

std::vector<RunStats> run_length_stats(const std::vector<DocumentSequence>& docs, std::size_t n_classes) {
  std::vector<std::vector<std::size_t>> runs(n_classes);
  for (const auto& doc : docs) {
    std::size_t t = 0;
    while (t < doc.pages.size()) {
      const auto c = single_label(doc.pages[t]);
      std::size_t end = t + 1;
      while (end < doc.pages.size() && single_label(doc.pages[end]) == c) ++end;
      runs.at(c).push_back(end - t);
      t = end;
    }
  }
  std::vector<RunStats> out(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& r = runs[c];
    if (r.empty()) continue;
    std::sort(r.begin(), r.end());
    const auto m = r.size();
    out[c].runs = m;
    out[c].max_run = r.back();
    out[c].median_run = m % 2 ? static_cast<double>(r[m / 2]) : 0.5 * static_cast<double>(r[m / 2 - 1] + r[m / 2]);
    for (auto len : r) out[c].total_pages += len;
  }
  return out;
}

SelfTransitionStats transition_self_prob(const std::vector<DocumentSequence>& docs, std::size_t n_classes) {
  std::vector<std::size_t> with_successor(n_classes, 0), repeated(n_classes, 0);
  for (const auto& doc : docs) {
    for (std::size_t t = 0; t + 1 < doc.pages.size(); ++t) {
      const auto c = single_label(doc.pages[t]);
      with_successor.at(c)++;
      if (single_label(doc.pages[t + 1]) == c) repeated[c]++;
    }
    if (!doc.pages.empty()) single_label(doc.pages.back());
  }
  SelfTransitionStats out;
  out.per_class.resize(n_classes);
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (with_successor[c] == 0) continue;
    const double p = static_cast<double>(repeated[c]) / static_cast<double>(with_successor[c]);
    out.per_class[c] = p;
    sum += p;
    ++defined;
  }
  out.macro_average = defined ? sum / static_cast<double>(defined) : 0.0;
  return out;
}

}  // namespace pagectx
