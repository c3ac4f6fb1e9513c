#include "pagectx/features.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "pagectx/error.hpp"
#include "pagectx/params.hpp"
#include "pagectx/random.hpp"

namespace pagectx {

using nlohmann::json;

namespace {

// A decoded unit: a code point, or a raw byte that was not valid UTF-8.
struct Unit {
  char32_t cp;
  bool raw;
};

std::vector<Unit> decode_utf8(std::string_view s) {
  std::vector<Unit> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (b & 0x3F);
    }
    // Reject overlong forms and surrogates so re-encoding is exact.
    if (ok && ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && (cp < 0x10000 || cp > 0x10FFFF)) ||
               (cp >= 0xD800 && cp <= 0xDFFF)))
      ok = false;
    if (!ok) {
      out.push_back({b0, true});
      ++i;
    } else {
      out.push_back({cp, false});
      i += len;
    }
  }
  return out;
}

void encode_utf8(const Unit& u, std::string& out) {
  if (u.raw) {
    out.push_back(static_cast<char>(u.cp));
    return;
  }
  const char32_t cp = u.cp;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Unicode White_Space property.
bool is_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

// ASCII punctuation and symbols, Latin-1 punctuation, General Punctuation,
// CJK punctuation and the full-width ASCII punctuation block.
bool is_punct(char32_t c) {
  if (c < 0x80) return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
                       (c >= 0x7B && c <= 0x7E);
  switch (c) {
    case 0xA1: case 0xA7: case 0xAB: case 0xB6: case 0xB7: case 0xBB: case 0xBF:
      return true;
    default:
      break;
  }
  return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) || (c >= 0x3001 && c <= 0x3003) ||
         (c >= 0x3008 && c <= 0x3011) || (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) ||
         (c >= 0xFF3B && c <= 0xFF40) || (c >= 0xFF5B && c <= 0xFF65);
}

// Simple case folding for ASCII, Latin-1, Latin Extended-A, Greek and Cyrillic.
char32_t to_lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 0x20;
  if (c < 0xC0) return c;
  if (c <= 0xDE) return c == 0xD7 ? c : c + 0x20;
  if (c >= 0x100 && c <= 0x17F) {
    if ((c <= 0x12F) || (c >= 0x132 && c <= 0x137) || (c >= 0x14A && c <= 0x177)) return (c % 2 == 0) ? c + 1 : c;
    if ((c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E)) return (c % 2 == 1) ? c + 1 : c;
    if (c == 0x178) return 0xFF;
    return c;
  }
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 0x20;
  if (c >= 0x410 && c <= 0x42F) return c + 0x20;
  if (c >= 0x400 && c <= 0x40F) return c + 0x50;
  return c;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  const auto units = decode_utf8(text);
  std::size_t i = 0;
  while (i < units.size()) {
    while (i < units.size() && !units[i].raw && is_space(units[i].cp)) ++i;
    std::size_t begin = i;
    while (i < units.size() && !(!units[i].raw && is_space(units[i].cp))) ++i;
    std::size_t end = i;
    while (begin < end && !units[begin].raw && is_punct(units[begin].cp)) ++begin;
    while (end > begin && !units[end - 1].raw && is_punct(units[end - 1].cp)) --end;
    if (begin == end) continue;
    std::string tok;
    for (std::size_t k = begin; k < end; ++k) {
      Unit u = units[k];
      if (!u.raw) u.cp = to_lower(u.cp);
      encode_utf8(u, tok);
    }
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

// ---------------------------------------------------------------------------

Vocabulary Vocabulary::fit(const std::vector<DocumentSequence>& train, std::size_t cap) {
  std::vector<std::vector<std::string>> pages;
  pages.reserve(page_count(train));
  for (const auto& doc : train)
    for (const auto& p : doc.pages) pages.push_back(tokenize(p.text));
  return fit(pages, cap);
}

Vocabulary Vocabulary::fit(const std::vector<std::vector<std::string>>& tokenized_pages, std::size_t cap) {
  if (cap < 1) throw Error("vocabulary cap must be at least 1");
  std::size_t total_tokens = 0;
  for (const auto& p : tokenized_pages) total_tokens += p.size();
  if (total_tokens == 0) throw Error("cannot fit a vocabulary on an empty corpus");

  struct Counts {
    std::size_t collection = 0, document = 0, last_page = ~std::size_t{0};
  };
  std::unordered_map<std::string, Counts> counts;
  for (std::size_t i = 0; i < tokenized_pages.size(); ++i) {
    for (const auto& tok : tokenized_pages[i]) {
      auto& c = counts[tok];
      c.collection++;
      if (c.last_page != i) {
        c.document++;
        c.last_page = i;
      }
    }
  }
  std::vector<std::pair<const std::string*, const Counts*>> ranked;
  ranked.reserve(counts.size());
  for (const auto& [tok, c] : counts) ranked.emplace_back(&tok, &c);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second->collection != b.second->collection) return a.second->collection > b.second->collection;
    return *a.first < *b.first;
  });
  if (ranked.size() > cap) ranked.resize(cap);

  Vocabulary v;
  v.cap_ = cap;
  v.training_pages_ = tokenized_pages.size();
  for (const auto& [tok, c] : ranked) {
    v.tokens_.push_back(*tok);
    v.coll_freq_.push_back(c->collection);
    v.doc_freq_.push_back(c->document);
  }
  v.index();
  return v;
}

void Vocabulary::index() {
  ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], i);
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? tokens_.size() : it->second;
}

json Vocabulary::to_json() const {
  return {{"tokenizer", std::string(kTokenizerVersion)},
          {"cap", cap_},
          {"training_pages", training_pages_},
          {"tokens", tokens_},
          {"document_frequency", doc_freq_},
          {"collection_frequency", coll_freq_}};
}

Vocabulary Vocabulary::from_json(const json& j) {
  if (j.at("tokenizer").get<std::string>() != kTokenizerVersion)
    throw FormatError("vocabulary was built with a different tokenizer: " + j.at("tokenizer").get<std::string>());
  Vocabulary v;
  v.cap_ = j.at("cap").get<std::size_t>();
  v.training_pages_ = j.at("training_pages").get<std::size_t>();
  v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
  v.doc_freq_ = j.at("document_frequency").get<std::vector<std::size_t>>();
  v.coll_freq_ = j.at("collection_frequency").get<std::vector<std::size_t>>();
  if (v.doc_freq_.size() != v.tokens_.size() || v.coll_freq_.size() != v.tokens_.size())
    throw FormatError("vocabulary frequency tables do not match the token list");
  v.index();
  return v;
}

// ---------------------------------------------------------------------------

TfIdfModel::TfIdfModel(Vocabulary vocabulary) : vocab_(std::move(vocabulary)) {
  const auto v = vocab_.size();
  idf_.resize(static_cast<Eigen::Index>(v));
  const double n = static_cast<double>(vocab_.training_pages());
  for (std::size_t i = 0; i < v; ++i)
    idf_[static_cast<Eigen::Index>(i)] =
        std::log((1.0 + n) / (1.0 + static_cast<double>(vocab_.document_frequency(i)))) + 1.0;
}

SparseVector TfIdfModel::transform(std::string_view text) const { return transform_tokens(tokenize(text)); }

SparseVector TfIdfModel::transform_tokens(const std::vector<std::string>& tokens) const {
  std::map<std::size_t, double> tf;
  for (const auto& t : tokens) {
    auto id = vocab_.id(t);
    if (id != vocab_.size()) tf[id] += 1.0;
  }
  SparseVector out(static_cast<Eigen::Index>(vocab_.size()));
  out.reserve(static_cast<Eigen::Index>(tf.size()));
  double norm2 = 0.0;
  for (auto& [id, w] : tf) {
    w *= idf_[static_cast<Eigen::Index>(id)];
    norm2 += w * w;
  }
  const double scale = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
  for (const auto& [id, w] : tf) out.insert(static_cast<Eigen::Index>(id)) = w * scale;
  return out;
}

SparseRows TfIdfModel::transform_pages(const std::vector<DocumentSequence>& docs) const {
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::Index row = 0;
  for (const auto& doc : docs) {
    for (const auto& p : doc.pages) {
      auto v = transform(p.text);
      for (SparseVector::InnerIterator it(v); it; ++it) triplets.emplace_back(row, it.index(), it.value());
      ++row;
    }
  }
  SparseRows m(row, static_cast<Eigen::Index>(vocab_.size()));
  m.setFromTriplets(triplets.begin(), triplets.end());
  return m;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd SvdProjector::project(const SparseVector& x) const {
  if (x.size() != basis_.rows()) throw Error("projection input has the wrong dimension");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(basis_.cols());
  for (SparseVector::InnerIterator it(x); it; ++it) out += it.value() * basis_.row(it.index()).transpose();
  return out;
}

Eigen::VectorXd SvdProjector::project(const Eigen::VectorXd& x) const {
  if (x.size() != basis_.rows()) throw Error("projection input has the wrong dimension");
  return basis_.transpose() * x;
}

SvdProjector fit_svd(const SparseRows& matrix, std::size_t k, const SvdOptions& options) {
  const auto rows = static_cast<std::size_t>(matrix.rows());
  const auto cols = static_cast<std::size_t>(matrix.cols());
  if (k < 1 || k > std::min(rows, cols))
    throw Error("SVD rank " + std::to_string(k) + " exceeds min(pages, vocabulary) = " +
                std::to_string(std::min(rows, cols)));

  // Oversampled block; extra columns speed up convergence of the k-th value.
  const auto block = static_cast<Eigen::Index>(std::min(cols, k + std::min<std::size_t>(k, 10)));
  Rng rng(options.seed);
  Eigen::MatrixXd q(static_cast<Eigen::Index>(cols), block);
  fill_normal(q, 1.0, rng);
  q = Eigen::HouseholderQR<Eigen::MatrixXd>(q).householderQ() * Eigen::MatrixXd::Identity(q.rows(), block);

  const auto kk = static_cast<Eigen::Index>(k);
  Eigen::VectorXd previous = Eigen::VectorXd::Constant(kk, -1.0);
  Eigen::VectorXd sigma;
  Eigen::MatrixXd ritz_basis;
  for (std::size_t iter = 1; iter <= options.max_iterations; ++iter) {
    Eigen::MatrixXd z = matrix.transpose() * (matrix * q);
    q = Eigen::HouseholderQR<Eigen::MatrixXd>(z).householderQ() * Eigen::MatrixXd::Identity(z.rows(), block);

    // Rayleigh-Ritz on the current block.
    Eigen::MatrixXd aq = matrix * q;
    Eigen::MatrixXd gram = aq.transpose() * aq;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    // Eigen sorts ascending; reverse into descending order.
    Eigen::VectorXd values = eig.eigenvalues().reverse().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd vectors = eig.eigenvectors().rowwise().reverse();
    sigma = values.head(kk);
    ritz_basis = q * vectors;

    const double scale = std::max(sigma[0], std::numeric_limits<double>::min());
    const double change = (sigma - previous).cwiseAbs().maxCoeff() / scale;
    previous = sigma;
    if (change <= options.tolerance && iter > 1) {
      // Fix the sign of each column: largest-magnitude entry positive.
      Eigen::MatrixXd basis = ritz_basis.leftCols(kk);
      for (Eigen::Index c = 0; c < kk; ++c) {
        Eigen::Index arg;
        basis.col(c).cwiseAbs().maxCoeff(&arg);
        if (basis(arg, c) < 0) basis.col(c) *= -1.0;
      }
      SvdProjector out(std::move(basis), sigma);
      out.iterations_ = iter;
      return out;
    }
    q = ritz_basis;
  }
  throw ConvergenceError("truncated SVD did not converge within " + std::to_string(options.max_iterations) +
                         " iterations");
}

// ---------------------------------------------------------------------------

PageFeaturizer::PageFeaturizer(TfIdfModel tfidf, SvdProjector svd) : tfidf_(std::move(tfidf)), svd_(std::move(svd)) {
  if (svd_.input_dimension() != tfidf_.dimension()) throw Error("SVD basis does not match the TF-IDF dimension");
}

PageFeaturizer PageFeaturizer::fit(const std::vector<DocumentSequence>& train, std::size_t vocab_cap,
                                   std::size_t dimensions, const SvdOptions& options) {
  TfIdfModel tfidf(Vocabulary::fit(train, vocab_cap));
  auto matrix = tfidf.transform_pages(train);
  auto svd = fit_svd(matrix, dimensions, options);
  return PageFeaturizer(std::move(tfidf), std::move(svd));
}

PageVector PageFeaturizer::encode(std::string_view text) const { return svd_.project(tfidf_.transform(text)); }

std::vector<PageVector> PageFeaturizer::encode(const DocumentSequence& doc) const {
  std::vector<PageVector> out;
  out.reserve(doc.pages.size());
  for (const auto& p : doc.pages) out.push_back(encode(p.text));
  return out;
}

json PageFeaturizer::to_json() const {
  const auto& b = svd_.basis();
  return {{"vocabulary", tfidf_.vocabulary().to_json()},
          {"idf", std::vector<double>(tfidf_.idf().data(), tfidf_.idf().data() + tfidf_.idf().size())},
          {"basis", {{"rows", b.rows()}, {"cols", b.cols()}, {"data", std::vector<double>(b.data(), b.data() + b.size())}}},
          {"singular_values",
           std::vector<double>(svd_.singular_values().data(),
                               svd_.singular_values().data() + svd_.singular_values().size())}};
}

PageFeaturizer PageFeaturizer::from_json(const json& j) {
  TfIdfModel tfidf(Vocabulary::from_json(j.at("vocabulary")));
  const auto idf = j.at("idf").get<std::vector<double>>();
  if (idf.size() != tfidf.dimension()) throw FormatError("idf length does not match the vocabulary");
  for (std::size_t i = 0; i < idf.size(); ++i)
    if (idf[i] != tfidf.idf()[static_cast<Eigen::Index>(i)])
      throw FormatError("stored idf disagrees with the vocabulary document frequencies");
  const auto& bj = j.at("basis");
  Eigen::MatrixXd basis(bj.at("rows").get<Eigen::Index>(), bj.at("cols").get<Eigen::Index>());
  const auto data = bj.at("data").get<std::vector<double>>();
  if (data.size() != static_cast<std::size_t>(basis.size())) throw FormatError("SVD basis has the wrong size");
  std::copy(data.begin(), data.end(), basis.data());
  const auto sv = j.at("singular_values").get<std::vector<double>>();
  Eigen::VectorXd sigma = Eigen::Map<const Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
  return PageFeaturizer(std::move(tfidf), SvdProjector(std::move(basis), std::move(sigma)));
}

}  // namespace pagectx
