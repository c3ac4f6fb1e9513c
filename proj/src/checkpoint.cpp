#include "pagectx/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "pagectx/error.hpp"

namespace pagectx {

using nlohmann::json;

namespace {

constexpr const char* kEncoderFormat = "pagectx-encoder/1";
constexpr const char* kCrfFormat = "pagectx-crf/1";
constexpr const char* kBiLstmFormat = "pagectx-bilstm/1";

void expect_format(const json& j, const char* format) {
  if (!j.is_object() || !j.contains("format") || j.at("format") != format)
    throw FormatError(std::string("expected a checkpoint with format \"") + format + "\"");
}

std::string content_hash(json j) {
  j.erase("id");
  return json_hash(j);
}

void verify_id(const json& j) {
  const auto stored = j.at("id").get<std::string>();
  if (stored != content_hash(j)) throw FormatError("checkpoint id does not match its content (file was modified?)");
}

template <typename F>
auto parse_or_rethrow(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a_hex(std::string_view data) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(data)));
  return buf;
}

std::string json_hash(const json& j) { return fnv1a_hex(j.dump()); }

json provenance(const json& config, std::uint64_t seed) {
  return {{"config_hash", json_hash(config)}, {"version", std::string(kToolkitVersion)}, {"seed", seed}};
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

json type_vocabulary_to_json(const TypeVocabulary& vocabulary) {
  return {{"classes", vocabulary.class_names()}, {"label_mode", std::string(to_string(vocabulary.label_mode()))}};
}

TypeVocabulary type_vocabulary_from_json(const json& j) {
  return parse_or_rethrow("classes", [&] {
    return TypeVocabulary(j.at("classes").get<std::vector<std::string>>(),
                          parse_label_mode(j.at("label_mode").get<std::string>()));
  });
}

// ---------------------------------------------------------------------------

json EncoderCheckpoint::to_json() const {
  json j = {{"format", kEncoderFormat},
            {"types", type_vocabulary_to_json(classes)},
            {"text_vocabulary", vocab.text_vocabulary().to_json()},
            {"recurrent", recurrent},
            {"train", train.to_json()},
            {"encoder", encoder.config().to_json()},
            {"params", encoder.params().to_json()},
            {"provenance", provenance}};
  if (!id.empty()) j["id"] = id;
  return j;
}

void EncoderCheckpoint::seal() {
  id.clear();
  id = content_hash(to_json());
}

EncoderCheckpoint EncoderCheckpoint::from_json(const json& j) {
  expect_format(j, kEncoderFormat);
  return parse_or_rethrow("encoder checkpoint", [&] {
    verify_id(j);
    EncoderCheckpoint c;
    c.classes = type_vocabulary_from_json(j.at("types"));
    c.vocab = InputVocabulary(Vocabulary::from_json(j.at("text_vocabulary")), c.classes.size());
    c.recurrent = j.at("recurrent").get<bool>();
    c.train = TrainConfig::from_json(j.at("train"));
    const auto cfg = EncoderConfig::from_json(j.at("encoder"));
    if (cfg.vocab_size != c.vocab.size() || cfg.n_classes != c.classes.size())
      throw FormatError("encoder config does not match the stored vocabularies");
    c.encoder = Encoder(cfg);
    c.encoder.params().assign_from_json(j.at("params"));
    c.provenance = j.value("provenance", json(nullptr));
    c.id = j.at("id").get<std::string>();
    return c;
  });
}

json CrfCheckpoint::to_json() const {
  json j = {{"format", kCrfFormat},
            {"types", type_vocabulary_to_json(classes)},
            {"model", model.to_json()},
            {"fit", {{"options", options.to_json()}, {"iterations", iterations}, {"converged", converged}}},
            {"source_checkpoint_id", source_checkpoint_id},
            {"provenance", provenance}};
  if (!id.empty()) j["id"] = id;
  return j;
}

void CrfCheckpoint::seal() {
  id.clear();
  id = content_hash(to_json());
}

CrfCheckpoint CrfCheckpoint::from_json(const json& j) {
  expect_format(j, kCrfFormat);
  return parse_or_rethrow("CRF checkpoint", [&] {
    verify_id(j);
    CrfCheckpoint c;
    c.classes = type_vocabulary_from_json(j.at("types"));
    c.model = CrfModel::from_json(j.at("model"));
    if (c.model.size() != c.classes.size()) throw FormatError("CRF size does not match the class list");
    const auto& fit = j.at("fit");
    c.options.l2 = fit.at("options").at("l2").get<double>();
    c.options.tolerance = fit.at("options").at("tolerance").get<double>();
    c.options.max_iterations = fit.at("options").at("max_iterations").get<std::size_t>();
    c.iterations = fit.at("iterations").get<std::size_t>();
    c.converged = fit.at("converged").get<bool>();
    c.source_checkpoint_id = j.at("source_checkpoint_id").get<std::string>();
    c.provenance = j.value("provenance", json(nullptr));
    c.id = j.at("id").get<std::string>();
    return c;
  });
}

json BiLstmCheckpoint::to_json() const {
  json j = {{"format", kBiLstmFormat},
            {"types", type_vocabulary_to_json(classes)},
            {"featurizer", featurizer.to_json()},
            {"bilstm", model.config().to_json()},
            {"train", train.to_json()},
            {"params", model.params().to_json()},
            {"provenance", provenance}};
  if (!id.empty()) j["id"] = id;
  return j;
}

void BiLstmCheckpoint::seal() {
  id.clear();
  id = content_hash(to_json());
}

BiLstmCheckpoint BiLstmCheckpoint::from_json(const json& j) {
  expect_format(j, kBiLstmFormat);
  return parse_or_rethrow("BiLSTM checkpoint", [&] {
    verify_id(j);
    BiLstmCheckpoint c;
    c.classes = type_vocabulary_from_json(j.at("types"));
    c.featurizer = PageFeaturizer::from_json(j.at("featurizer"));
    const auto cfg = BiLstmConfig::from_json(j.at("bilstm"));
    if (cfg.input_dim != c.featurizer.dimension() || cfg.n_classes != c.classes.size())
      throw FormatError("BiLSTM config does not match the featurizer or class list");
    c.model = BiLstm(cfg);
    c.model.params().assign_from_json(j.at("params"));
    c.train = TrainConfig::from_json(j.at("train"));
    c.provenance = j.value("provenance", json(nullptr));
    c.id = j.at("id").get<std::string>();
    return c;
  });
}

std::string checkpoint_kind(const json& j) {
  const auto format = j.is_object() ? j.value("format", std::string()) : std::string();
  if (format == kEncoderFormat) return "encoder";
  if (format == kCrfFormat) return "crf";
  if (format == kBiLstmFormat) return "bilstm";
  throw FormatError("unrecognized checkpoint format \"" + format + "\"");
}

// ---------------------------------------------------------------------------

void write_saved_predictions(std::ostream& out, const std::vector<PredictionTrace>& traces,
                             const std::string& checkpoint_id, const json& provenance) {
  if (!provenance.is_null()) out << json{{"_provenance", provenance}}.dump() << '\n';
  for (const auto& trace : traces) {
    for (const auto& step : trace.steps) {
      json line = {{"doc_id", trace.doc_id},
                   {"page_index", step.page_index},
                   {"checkpoint_id", checkpoint_id},
                   {"logits", std::vector<double>(step.scores.data(), step.scores.data() + step.scores.size())}};
      out << line.dump() << '\n';
    }
  }
}

std::vector<SavedPrediction> read_saved_predictions(std::istream& in) {
  std::vector<SavedPrediction> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(text);
      if (j.contains("_provenance")) continue;
      SavedPrediction p;
      p.doc_id = j.at("doc_id").get<std::string>();
      p.page_index = j.at("page_index").get<std::size_t>();
      p.checkpoint_id = j.at("checkpoint_id").get<std::string>();
      const auto v = j.at("logits").get<std::vector<double>>();
      if (v.empty()) throw FormatError("empty logits", line);
      p.logits = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      if (!p.logits.allFinite()) throw FormatError("non-finite logits", line);
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw FormatError(e.what(), line);
    }
  }
  return out;
}

std::vector<std::vector<ScoreVector>> align_predictions(const std::vector<SavedPrediction>& predictions,
                                                        const std::vector<DocumentSequence>& docs,
                                                        std::string* checkpoint_id) {
  std::map<std::pair<std::string, std::size_t>, const SavedPrediction*> index;
  std::set<std::string> ids;
  for (const auto& p : predictions) {
    if (!index.emplace(std::make_pair(p.doc_id, p.page_index), &p).second)
      throw Error("duplicate saved prediction for " + p.doc_id + " page " + std::to_string(p.page_index));
    ids.insert(p.checkpoint_id);
  }
  if (ids.size() > 1) throw Error("saved predictions come from more than one checkpoint");
  std::vector<std::vector<ScoreVector>> out;
  std::size_t used = 0;
  for (const auto& doc : docs) {
    auto& seq = out.emplace_back();
    for (const auto& page : doc.pages) {
      const auto it = index.find({doc.doc_id, page.page_index});
      if (it == index.end())
        throw Error("no saved prediction for " + doc.doc_id + " page " + std::to_string(page.page_index));
      seq.push_back(it->second->logits);
      ++used;
    }
  }
  if (used != predictions.size()) throw Error("saved predictions include pages outside the corpus split");
  if (checkpoint_id) *checkpoint_id = ids.empty() ? std::string() : *ids.begin();
  return out;
}

}  // namespace pagectx
