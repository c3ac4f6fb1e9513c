#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pagectx/bilstm.hpp"
#include "pagectx/corpus.hpp"
#include "pagectx/crf.hpp"
#include "pagectx/encoder.hpp"
#include "pagectx/features.hpp"
#include "pagectx/recurrence.hpp"
#include "pagectx/training.hpp"

namespace pagectx {

inline constexpr std::string_view kToolkitVersion = "0.1.0";

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view data);
/// 16 lowercase hex digits of fnv1a(data).
std::string fnv1a_hex(std::string_view data);
/// Hash of the compact dump of `j` (object keys are sorted by the dump).
std::string json_hash(const nlohmann::json& j);

/// {"config_hash", "version", "seed"}.
nlohmann::json provenance(const nlohmann::json& config, std::uint64_t seed);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

nlohmann::json type_vocabulary_to_json(const TypeVocabulary& vocabulary);
TypeVocabulary type_vocabulary_from_json(const nlohmann::json& j);

/// Trained page encoder plus everything needed to rebuild its inputs.
/// `id` is the hash of the serialized content without the id itself.
struct EncoderCheckpoint {
  TypeVocabulary classes;
  InputVocabulary vocab;
  bool recurrent = false;
  TrainConfig train;
  Encoder encoder;
  nlohmann::json provenance;
  std::string id;

  nlohmann::json to_json() const;
  static EncoderCheckpoint from_json(const nlohmann::json& j);
  /// Fills `id` from the current content.
  void seal();
};

struct CrfCheckpoint {
  TypeVocabulary classes;
  CrfModel model;
  CrfFitOptions options;
  std::size_t iterations = 0;
  bool converged = false;
  std::string source_checkpoint_id;  // frozen encoder whose predictions were used
  nlohmann::json provenance;
  std::string id;

  nlohmann::json to_json() const;
  static CrfCheckpoint from_json(const nlohmann::json& j);
  void seal();
};

struct BiLstmCheckpoint {
  TypeVocabulary classes;
  PageFeaturizer featurizer;
  BiLstm model;
  TrainConfig train;
  nlohmann::json provenance;
  std::string id;

  nlohmann::json to_json() const;
  static BiLstmCheckpoint from_json(const nlohmann::json& j);
  void seal();
};

/// "encoder", "crf" or "bilstm" from a checkpoint's "format" field.
std::string checkpoint_kind(const nlohmann::json& j);

// Saved predictions JSONL, one line per page:
//   {"doc_id", "page_index", "checkpoint_id", "logits": [..]}
struct SavedPrediction {
  std::string doc_id;
  std::size_t page_index = 0;
  std::string checkpoint_id;
  ScoreVector logits;
};

void write_saved_predictions(std::ostream& out, const std::vector<PredictionTrace>& traces,
                             const std::string& checkpoint_id, const nlohmann::json& provenance = nullptr);
std::vector<SavedPrediction> read_saved_predictions(std::istream& in);

/// Per-document logit sequences in `docs` order. Throws if a page is missing
/// or duplicated, or if the lines come from more than one checkpoint.
std::vector<std::vector<ScoreVector>> align_predictions(const std::vector<SavedPrediction>& predictions,
                                                        const std::vector<DocumentSequence>& docs,
                                                        std::string* checkpoint_id = nullptr);

}  // namespace pagectx
