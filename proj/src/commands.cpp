#include "pagectx/commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "pagectx/checkpoint.hpp"
#include "pagectx/error.hpp"
#include "pagectx/eval.hpp"
#include "pagectx/features.hpp"
#include "pagectx/recurrence.hpp"

namespace pagectx {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kExperimentFormat = "pagectx-experiment/1";

void reject_unknown(const json& j, const std::string& prefix, const std::set<std::string>& known) {
  if (!j.is_object()) throw FormatError(prefix + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw FormatError((prefix.empty() ? "" : prefix + ".") + key + ": unknown field");
}

template <typename T>
void read_field(const json& j, const char* name, const std::string& prefix, T& dst) {
  if (!j.contains(name)) return;
  const auto& v = j.at(name);
  const std::string where = (prefix.empty() ? "" : prefix + ".") + name;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!v.is_number_integer()) throw FormatError(where + ": expected a non-negative integer");
    if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
      throw FormatError(where + ": must be non-negative");
  }
  try {
    v.get_to(dst);
  } catch (const json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

void reject_key(const json& j, const char* key, const std::string& where, const char* why) {
  if (j.contains(key)) throw FormatError(where + "." + key + ": " + why);
}

TrainConfig train_section(const json& j, const std::string& prefix) {
  reject_key(j, "seed", prefix, "set the top-level seed instead");
  return TrainConfig::from_json(j, prefix);
}

template <typename F>
auto with_prefix(const std::string& prefix, F&& f) {
  try {
    return f();
  } catch (const FormatError& e) {
    throw FormatError(prefix + "." + e.what());
  }
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

json read_provenance_line(const fs::path& path) {
  std::ifstream in(path);
  std::string first;
  if (!in || !std::getline(in, first)) return nullptr;
  try {
    const auto j = json::parse(first);
    if (j.is_object() && j.contains("_provenance")) return j.at("_provenance");
  } catch (const json::exception&) {
  }
  return nullptr;
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a_hex(ss.str());
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::vector<std::size_t> single_labels(const DocumentSequence& doc) {
  std::vector<std::size_t> out;
  for (const auto& p : doc.pages) out.push_back(p.gold_labels.front());
  return out;
}

std::vector<ScoreVector> trace_scores(const PredictionTrace& trace) {
  std::vector<ScoreVector> out;
  for (const auto& s : trace.steps) out.push_back(s.scores);
  return out;
}

void print_corpus_summary(const CorpusSplit& corpus, std::ostream& log) {
  const auto& types = corpus.vocabulary;
  const auto n = types.size();
  for (const char* name : {"train", "validation", "test"}) {
    const auto& docs = corpus.split(name);
    const auto counts = class_page_counts(docs, n);
    const auto self = transition_self_prob(docs, n);
    log << name << ": " << docs.size() << " documents, " << page_count(docs) << " pages\n";
    for (std::size_t c = 0; c < n; ++c) {
      log << "  " << types.name(c) << ": " << counts[c] << " pages, self-transition ";
      if (self.per_class[c]) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", *self.per_class[c]);
        log << buf;
      } else {
        log << "n/a";
      }
      log << '\n';
    }
  }
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e)) return kExitDiverged;
  if (dynamic_cast<const FormatError*>(&e)) return kExitUsage;
  return kExitRuntime;
}

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  reject_unknown(j, "", {"format", "corpus", "mode", "seed", "encoder", "features", "train", "baselines", "crf",
                         "bilstm", "output_dir"});
  ExperimentConfig c;
  if (j.contains("format") && j.at("format") != kExperimentFormat)
    throw FormatError(std::string("format: expected \"") + kExperimentFormat + "\"");
  read_field(j, "seed", "", c.seed);

  if (!j.contains("corpus")) throw FormatError("corpus: required (give \"manifest\" or \"synthetic\")");
  const auto& corpus = j.at("corpus");
  reject_unknown(corpus, "corpus", {"manifest", "synthetic"});
  if (corpus.contains("manifest") == corpus.contains("synthetic"))
    throw FormatError("corpus: give exactly one of \"manifest\" or \"synthetic\"");
  if (corpus.contains("manifest")) {
    std::string p;
    read_field(corpus, "manifest", "corpus", p);
    c.manifest = fs::path(p).is_absolute() || base_dir.empty() ? fs::path(p) : base_dir / p;
  } else {
    reject_key(corpus.at("synthetic"), "seed", "corpus.synthetic", "set the top-level seed instead");
    c.synthetic = with_prefix("corpus", [&] { return SynthConfig::from_json(corpus.at("synthetic")); });
    c.synthetic->seed = c.seed;
  }

  if (j.contains("mode")) {
    std::string mode;
    read_field(j, "mode", "", mode);
    c.set_mode(mode);
  }

  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    if (!e.is_object()) throw FormatError("encoder: expected an object");
    reject_key(e, "init_seed", "encoder", "set the top-level seed instead");
    reject_key(e, "n_classes", "encoder", "derived from the corpus");
    reject_key(e, "vocab_size", "encoder", "derived from the fitted vocabulary");
    c.encoder = EncoderConfig::from_json(e);
  }
  if (j.contains("features")) {
    reject_unknown(j.at("features"), "features", {"vocab_cap"});
    read_field(j.at("features"), "vocab_cap", "features", c.vocab_cap);
  }
  if (j.contains("train")) c.train = train_section(j.at("train"), "train");
  if (j.contains("baselines")) {
    reject_unknown(j.at("baselines"), "baselines", {"crf", "bilstm"});
    read_field(j.at("baselines"), "crf", "baselines", c.crf);
    read_field(j.at("baselines"), "bilstm", "baselines", c.bilstm);
  }
  if (j.contains("crf")) {
    reject_unknown(j.at("crf"), "crf", {"l2", "tolerance", "max_iterations"});
    read_field(j.at("crf"), "l2", "crf", c.crf_options.l2);
    read_field(j.at("crf"), "tolerance", "crf", c.crf_options.tolerance);
    read_field(j.at("crf"), "max_iterations", "crf", c.crf_options.max_iterations);
  }
  if (j.contains("bilstm")) {
    const auto& b = j.at("bilstm");
    reject_unknown(b, "bilstm", {"hidden", "svd_dims", "vocab_cap", "train"});
    read_field(b, "hidden", "bilstm", c.bilstm_hidden);
    read_field(b, "svd_dims", "bilstm", c.bilstm_svd_dims);
    read_field(b, "vocab_cap", "bilstm", c.bilstm_vocab_cap);
    if (b.contains("train")) c.bilstm_train = train_section(b.at("train"), "bilstm.train");
  }
  if (j.contains("output_dir")) {
    std::string p;
    read_field(j, "output_dir", "", p);
    c.output_dir = p;
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  return from_json(read_json_file(path), path.parent_path());
}

void ExperimentConfig::set_mode(const std::string& mode) {
  if (mode == "oblivious")
    recurrent = false;
  else if (mode == "recurrent")
    recurrent = true;
  else
    throw FormatError("mode: expected \"oblivious\" or \"recurrent\", got \"" + mode + "\"");
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  if (synthetic) synthetic->seed = s;
}

void ExperimentConfig::validate() const {
  if (manifest.has_value() == synthetic.has_value())
    throw FormatError("corpus: give exactly one of \"manifest\" or \"synthetic\"");
  if (synthetic) with_prefix("corpus.synthetic", [&] { synthetic->validate(); return 0; });
  with_prefix("train", [&] { train.validate(); return 0; });
  with_prefix("bilstm.train", [&] { bilstm_train.validate(); return 0; });
  if (vocab_cap < 1) throw FormatError("features.vocab_cap: must be at least 1");
  if (crf && recurrent)
    throw FormatError("baselines.crf: requires mode \"oblivious\" (the CRF runs on a frozen context-oblivious checkpoint)");
  if (!(crf_options.l2 >= 0.0)) throw FormatError("crf.l2: must be non-negative");
  if (!(crf_options.tolerance > 0.0)) throw FormatError("crf.tolerance: must be positive");
  if (crf_options.max_iterations < 1) throw FormatError("crf.max_iterations: must be at least 1");
  if (bilstm_hidden < 1) throw FormatError("bilstm.hidden: must be at least 1");
  if (bilstm_svd_dims < 1) throw FormatError("bilstm.svd_dims: must be at least 1");
  if (bilstm_vocab_cap < 1) throw FormatError("bilstm.vocab_cap: must be at least 1");
  if (encoder.d_model < 1) throw FormatError("encoder.d_model: must be positive");
  if (!(encoder.dropout >= 0.0 && encoder.dropout < 1.0)) throw FormatError("encoder.dropout: must lie in [0, 1)");
  if (encoder.variant == EncoderVariant::tiny_transformer) {
    if (encoder.n_layers < 1) throw FormatError("encoder.n_layers: must be positive");
    if (encoder.n_heads < 1 || encoder.d_model % encoder.n_heads != 0)
      throw FormatError("encoder.n_heads: must divide d_model");
    if (encoder.ff_dim < 1) throw FormatError("encoder.ff_dim: must be positive");
  }
  if (output_dir.empty()) throw FormatError("output_dir: must not be empty");
}

json ExperimentConfig::to_json() const {
  auto without_seed = [](json t) {
    t.erase("seed");
    return t;
  };
  json corpus;
  if (manifest) corpus["manifest"] = manifest->generic_string();
  if (synthetic) corpus["synthetic"] = without_seed(synthetic->to_json());
  json enc = encoder.to_json();
  for (const char* k : {"n_classes", "vocab_size", "init_seed"}) enc.erase(k);
  return {{"format", kExperimentFormat},
          {"corpus", corpus},
          {"mode", mode_name()},
          {"seed", seed},
          {"encoder", enc},
          {"features", {{"vocab_cap", vocab_cap}}},
          {"train", without_seed(train.to_json())},
          {"baselines", {{"crf", crf}, {"bilstm", bilstm}}},
          {"crf", crf_options.to_json()},
          {"bilstm",
           {{"hidden", bilstm_hidden},
            {"svd_dims", bilstm_svd_dims},
            {"vocab_cap", bilstm_vocab_cap},
            {"train", without_seed(bilstm_train.to_json())}}},
          {"output_dir", output_dir.generic_string()}};
}

json ExperimentConfig::identity() const {
  json j = to_json();
  j.erase("output_dir");
  return j;
}

std::string ExperimentConfig::run_id() const { return mode_name() + "-" + json_hash(identity()).substr(0, 8); }

CorpusSplit resolve_corpus(const ExperimentConfig& config) {
  CorpusSplit corpus = config.manifest ? load_corpus(*config.manifest) : generate_synthetic(*config.synthetic);
  validate(corpus);
  return corpus;
}

// ---------------------------------------------------------------------------

SynthOutcome cmd_synth(const ExperimentConfig& config, std::ostream& log) {
  if (!config.synthetic) throw FormatError("corpus.synthetic: the synth command needs a synthetic corpus section");
  const json cfg = config.synthetic->to_json();
  SynthOutcome out;
  out.directory = config.output_dir / ("synth-" + json_hash(cfg).substr(0, 8));
  out.corpus = generate_synthetic(*config.synthetic);
  write_corpus(out.directory, out.corpus, provenance(cfg, config.seed));
  write_json_file(out.directory / "synth-config.json", cfg);
  log << "wrote " << (out.directory / "manifest.json").string() << '\n';
  print_corpus_summary(out.corpus, log);
  return out;
}

TrainOutcome cmd_train(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  const CorpusSplit corpus = resolve_corpus(config);
  const auto& types = corpus.vocabulary;
  const auto mode = types.label_mode();
  const auto n = types.size();
  if (mode == LabelMode::multilabel && (config.crf || config.bilstm))
    throw FormatError("baselines: the CRF and BiLSTM baselines support multiclass corpora only");

  TrainOutcome out;
  out.run_dir = config.run_dir();
  fs::create_directories(out.run_dir);
  const json cfg_json = config.to_json();
  const json prov = provenance(config.identity(), config.seed);
  write_json_file(out.run_dir / "config.json", cfg_json);

  if (config.synthetic) {
    write_corpus(out.run_dir / "corpus", corpus, prov);
    out.manifest = out.run_dir / "corpus" / "manifest.json";
  } else {
    out.manifest = *config.manifest;
  }

  InputVocabulary vocab(Vocabulary::fit(corpus.train, config.vocab_cap), n);
  EncoderConfig enc = config.encoder;
  enc.n_classes = n;
  enc.vocab_size = vocab.size();
  enc.init_seed = config.seed;
  enc.validate();
  TrainConfig tc = config.train;
  tc.seed = config.seed;

  log << "training " << config.mode_name() << " " << to_string(enc.variant) << " encoder on "
      << page_count(corpus.train) << " pages\n";
  out.report = train(enc, vocab, corpus.train, mode, config.recurrent, tc, &corpus.validation);
  for (const auto& e : out.report.epochs) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu: loss %.4f, train macro-F1 %s", e.epoch, e.mean_loss,
                  pct(e.train_macro_f1).c_str());
    log << buf;
    if (e.validation_macro_f1) log << ", validation macro-F1 " << pct(*e.validation_macro_f1);
    log << '\n';
  }

  EncoderCheckpoint ck{types, vocab, config.recurrent, tc, out.report.encoder, prov, {}};
  ck.seal();
  out.checkpoint = out.run_dir / "checkpoint.json";
  write_json_file(out.checkpoint, ck.to_json());
  json report = out.report.to_json();
  report["checkpoint_id"] = ck.id;
  report["provenance"] = prov;
  write_json_file(out.run_dir / "report.json", report);
  json timing = {{"encoder_wall_seconds", out.report.wall_seconds}};
  log << "checkpoint " << ck.id << " -> " << out.checkpoint.string() << '\n';

  if (config.crf) {
    for (const char* split : {"train", "validation", "test"}) {
      const auto traces = infer_corpus(ck.encoder, vocab, corpus.split(split), mode, false);
      auto f = open_output(out.run_dir / ("predictions-" + std::string(split) + ".jsonl"));
      write_saved_predictions(f, traces, ck.id, prov);
    }
    // The CRF sees only the saved predictions of the frozen checkpoint.
    std::ifstream saved(out.run_dir / "predictions-train.jsonl");
    std::string source_id;
    const auto logits = align_predictions(read_saved_predictions(saved), corpus.train, &source_id);
    std::vector<ScoreSequence> seqs;
    std::vector<std::vector<std::size_t>> golds;
    for (std::size_t d = 0; d < corpus.train.size(); ++d) {
      seqs.push_back(emissions_from_logits(logits[d]));
      golds.push_back(single_labels(corpus.train[d]));
    }
    const auto fit = crf_fit(seqs, golds, n, config.crf_options);
    if (!fit.converged)
      log << "warning: CRF fit did not converge within " << config.crf_options.max_iterations << " iterations\n";
    CrfCheckpoint crf{types, fit.model, config.crf_options, fit.iterations, fit.converged, source_id, prov, {}};
    crf.seal();
    out.crf_checkpoint = out.run_dir / "crf.json";
    write_json_file(*out.crf_checkpoint, crf.to_json());
    log << "CRF fit: " << fit.iterations << " iterations, " << (fit.converged ? "converged" : "not converged")
        << ", objective " << fit.objective << " -> " << out.crf_checkpoint->string() << '\n';
  }

  if (config.bilstm) {
    const auto text_vocab = Vocabulary::fit(corpus.train, config.bilstm_vocab_cap);
    const auto limit = std::min(page_count(corpus.train), text_vocab.size());
    if (config.bilstm_svd_dims > limit)
      throw FormatError("bilstm.svd_dims: " + std::to_string(config.bilstm_svd_dims) +
                        " exceeds min(training pages, vocabulary size) = " + std::to_string(limit));
    const auto featurizer = PageFeaturizer::fit(corpus.train, config.bilstm_vocab_cap, config.bilstm_svd_dims);
    std::vector<PageVectorSequence> docs;
    for (const auto& d : corpus.train) docs.push_back({featurizer.encode(d), single_labels(d)});
    BiLstmConfig bc{featurizer.dimension(), config.bilstm_hidden, n, config.seed};
    TrainConfig btc = config.bilstm_train;
    btc.seed = config.seed;
    log << "training BiLSTM (hidden " << bc.hidden << ") on " << bc.input_dim << "-dimensional page vectors\n";
    auto result = bilstm_train(docs, bc, btc);
    BiLstmCheckpoint bk{types, featurizer, result.model, btc, prov, {}};
    bk.seal();
    out.bilstm_checkpoint = out.run_dir / "bilstm.json";
    write_json_file(*out.bilstm_checkpoint, bk.to_json());
    json br = result.to_json();
    br["checkpoint_id"] = bk.id;
    br["provenance"] = prov;
    write_json_file(out.run_dir / "bilstm-report.json", br);
    log << "BiLSTM train accuracy " << pct(result.train_accuracy) << " -> " << out.bilstm_checkpoint->string()
        << '\n';
  }
  write_json_file(out.run_dir / "timing.json", timing);
  return out;
}

std::vector<PredictionTrace> cmd_infer(const InferRequest& request, std::ostream& log) {
  const json raw = read_json_file(request.checkpoint);
  const auto kind = checkpoint_kind(raw);
  std::vector<PredictionTrace> traces;
  json prov_cfg = {{"command", "infer"}, {"split", request.split}};
  std::uint64_t seed = 0;
  TypeVocabulary types;

  if (kind == "encoder") {
    const auto ck = EncoderCheckpoint::from_json(raw);
    types = ck.classes;
    if (request.mode) {
      const bool want = *request.mode == "recurrent";
      if (*request.mode != "recurrent" && *request.mode != "oblivious")
        throw FormatError("mode: expected \"oblivious\" or \"recurrent\", got \"" + *request.mode + "\"");
      if (want != ck.recurrent)
        throw FormatError("checkpoint/config mismatch: checkpoint was trained " +
                          std::string(ck.recurrent ? "recurrent" : "oblivious") + ", requested mode " +
                          *request.mode);
    }
    const auto corpus = load_corpus(request.manifest, ck.classes);
    const auto& docs = corpus.split(request.split);
    const auto mode = ck.classes.label_mode();
    traces = infer_corpus(ck.encoder, ck.vocab, docs, mode, ck.recurrent, request.threads);
    prov_cfg["checkpoint_id"] = ck.id;
    seed = ck.train.seed;
    if (request.crf) {
      if (ck.recurrent) throw FormatError("checkpoint/config mismatch: the CRF needs a context-oblivious checkpoint");
      const auto crf = CrfCheckpoint::from_json(read_json_file(*request.crf));
      if (crf.source_checkpoint_id != ck.id)
        throw FormatError("checkpoint/config mismatch: CRF was fit on predictions of checkpoint " +
                          crf.source_checkpoint_id + ", not " + ck.id);
      if (!(crf.classes == ck.classes)) throw FormatError("checkpoint/config mismatch: CRF class list differs");
      for (auto& trace : traces) {
        const auto path = crf_viterbi(crf.model, emissions_from_logits(trace_scores(trace)));
        for (std::size_t t = 0; t < trace.steps.size(); ++t) trace.steps[t].labels = {path.labels[t]};
      }
      prov_cfg["crf_id"] = crf.id;
    }
  } else if (kind == "bilstm") {
    if (request.crf) throw FormatError("--crf applies to encoder checkpoints only");
    if (request.mode) throw FormatError("checkpoint/config mismatch: BiLSTM checkpoints take no mode");
    const auto bk = BiLstmCheckpoint::from_json(raw);
    types = bk.classes;
    const auto corpus = load_corpus(request.manifest, bk.classes);
    for (const auto& doc : corpus.split(request.split)) {
      PredictionTrace trace{doc.doc_id, {}};
      const auto scores = bk.model.forward(bk.featurizer.encode(doc));
      for (std::size_t t = 0; t < doc.pages.size(); ++t)
        trace.steps.push_back({doc.pages[t].page_index, scores[t], predict(scores[t], LabelMode::multiclass), {}});
      traces.push_back(std::move(trace));
    }
    prov_cfg["checkpoint_id"] = bk.id;
    seed = bk.train.seed;
  } else {
    throw FormatError("infer needs an encoder or BiLSTM checkpoint; pass CRF checkpoints with --crf");
  }

  auto out = open_output(request.output);
  write_traces(out, traces, types, provenance(prov_cfg, seed));
  std::size_t pages = 0;
  for (const auto& t : traces) pages += t.size();
  log << "wrote " << pages << " trace lines for " << traces.size() << " documents -> " << request.output.string()
      << '\n';
  return traces;
}

json cmd_eval(const fs::path& traces_path, const fs::path& manifest, const std::string& split,
              const std::optional<fs::path>& json_out, std::ostream& log) {
  const auto corpus = load_corpus(manifest);
  const auto& docs = corpus.split(split);
  std::ifstream in(traces_path);
  if (!in) throw Error("cannot open " + traces_path.string());
  const auto traces = read_traces(in, corpus.vocabulary);
  check_alignment(traces, docs);
  const auto& types = corpus.vocabulary;
  const auto scores = score(decided_labels(traces), gold_labels(docs), types.size(), types.label_mode());
  log << format_score_table({{traces_path.stem().string(), scores}}, types);

  const auto source = read_provenance_line(traces_path);
  const json prov_cfg = {{"command", "eval"}, {"split", split}, {"traces_hash", file_hash(traces_path)}};
  json report = {{"split", split},
                 {"scores", scores.to_json(types)},
                 {"provenance", provenance(prov_cfg, source.is_object() ? source.value("seed", 0ULL) : 0ULL)}};
  if (json_out) write_json_file(*json_out, report);
  return report;
}

json cmd_compare(const fs::path& first, const fs::path& second, const fs::path& manifest, const std::string& split,
                 const std::optional<fs::path>& json_out, std::ostream& log) {
  const auto corpus = load_corpus(manifest);
  const auto& docs = corpus.split(split);
  auto load = [&](const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open " + p.string());
    return read_traces(in, corpus.vocabulary);
  };
  const auto a = load(first);
  const auto b = load(second);
  const auto cmp = compare_traces(a, b, docs, corpus.vocabulary);
  log << format_comparison(cmp, first.stem().string(), second.stem().string(), corpus.vocabulary);

  const json prov_cfg = {
      {"command", "compare"}, {"split", split}, {"first_hash", file_hash(first)}, {"second_hash", file_hash(second)}};
  const auto source = read_provenance_line(first);
  json report = cmp.to_json(corpus.vocabulary);
  report["split"] = split;
  report["provenance"] = provenance(prov_cfg, source.is_object() ? source.value("seed", 0ULL) : 0ULL);
  if (json_out) write_json_file(*json_out, report);
  return report;
}

json cmd_stats(const fs::path& manifest, std::ostream& log) {
  const auto corpus = load_corpus(manifest);
  const auto& types = corpus.vocabulary;
  const auto n = types.size();
  json out = {{"classes", types.class_names()}};
  print_corpus_summary(corpus, log);
  for (const char* name : {"train", "validation", "test"}) {
    const auto& docs = corpus.split(name);
    const auto self = transition_self_prob(docs, n);
    json s = {{"documents", docs.size()},
              {"pages", page_count(docs)},
              {"class_page_counts", class_page_counts(docs, n)},
              {"self_transition_macro", self.macro_average}};
    json per_class = json::array();
    for (const auto& p : self.per_class) per_class.push_back(p ? json(*p) : json(nullptr));
    s["self_transition"] = per_class;
    if (types.label_mode() == LabelMode::multiclass) {
      json runs = json::array();
      const auto stats = run_length_stats(docs, n);
      log << name << " runs (median / max / total pages):\n";
      for (std::size_t c = 0; c < n; ++c) {
        const auto& r = stats[c];
        runs.push_back({{"class", types.name(c)},
                        {"median_run", r.median_run},
                        {"max_run", r.max_run},
                        {"total_pages", r.total_pages},
                        {"runs", r.runs}});
        log << "  " << types.name(c) << ": " << r.median_run << " / " << r.max_run << " / " << r.total_pages << '\n';
      }
      s["runs"] = runs;
    }
    out[name] = s;
  }
  return out;
}

}  // namespace pagectx
