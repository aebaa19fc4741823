#include "comca/compatibility.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <thread>

#include "comca/diagnostics.hpp"

namespace comca {

std::vector<std::string> tokenize_caption(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

CooccurrenceCounter::CooccurrenceCounter(const Vocabulary& vocab, MatchConfig cfg)
    : cfg_(cfg), n_attributes_(vocab.attributes.size()), n_objects_(vocab.objects.size()) {
  if (vocab.attributes.empty() || vocab.objects.empty()) {
    throw Error(ErrorCode::EmptyVocabulary, "cannot count co-occurrences without attributes and objects");
  }
  auto add_term = [&](const std::string& text, std::size_t owner, bool is_attribute) {
    auto tokens = tokenize_caption(text);
    if (tokens.empty()) {
      warn("vocabulary term '" + text + "' has no tokens and never matches");
      return;
    }
    by_first_[tokens.front()].push_back(terms_.size());
    terms_.push_back(Term{std::move(tokens), owner, is_attribute});
  };
  for (std::size_t a = 0; a < vocab.attributes.size(); ++a) {
    add_term(vocab.attributes[a].name, a, true);
    for (const auto& syn : vocab.attributes[a].synonyms) add_term(syn, a, true);
  }
  for (std::size_t o = 0; o < vocab.objects.size(); ++o) add_term(vocab.objects[o], o, false);
  counts_.counts = CountMatrix::Zero(static_cast<Eigen::Index>(n_attributes_),
                                     static_cast<Eigen::Index>(n_objects_));
}

bool CooccurrenceCounter::token_matches(const std::string& tok, const std::string& term) const {
  if (tok == term) return true;
  if (!cfg_.plurals || tok.size() <= term.size() || tok.compare(0, term.size(), term) != 0) {
    return false;
  }
  const std::string_view suffix = std::string_view(tok).substr(term.size());
  return suffix == "s" || suffix == "es";
}

void CooccurrenceCounter::add_caption(std::string_view caption) {
  const auto tokens = tokenize_caption(caption);
  std::vector<char> attr_hit(n_attributes_, 0);
  std::vector<char> obj_hit(n_objects_, 0);

  std::vector<std::string> candidates;
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    const std::string& tok = tokens[pos];
    candidates.assign({tok});
    if (cfg_.plurals) {
      if (tok.size() > 1 && tok.back() == 's') candidates.push_back(tok.substr(0, tok.size() - 1));
      if (tok.size() > 2 && tok.ends_with("es")) candidates.push_back(tok.substr(0, tok.size() - 2));
    }
    for (const auto& cand : candidates) {
      auto it = by_first_.find(cand);
      if (it == by_first_.end()) continue;
      for (std::size_t t : it->second) {
        const Term& term = terms_[t];
        if (pos + term.tokens.size() > tokens.size()) continue;
        bool ok = true;
        for (std::size_t k = 0; k < term.tokens.size() && ok; ++k) {
          ok = token_matches(tokens[pos + k], term.tokens[k]);
        }
        if (ok) (term.is_attribute ? attr_hit : obj_hit)[term.owner] = 1;
      }
    }
  }
  for (std::size_t a = 0; a < n_attributes_; ++a) {
    if (!attr_hit[a]) continue;
    for (std::size_t o = 0; o < n_objects_; ++o) {
      if (obj_hit[o]) counts_.counts(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(o)) += 1;
    }
  }
  ++counts_.records;
}

void CooccurrenceCounter::add_record(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  if (line.empty()) return;
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos || tab == 0) {
    ++counts_.malformed;
    return;
  }
  std::string_view caption = line.substr(tab + 1);
  if (const auto tab2 = caption.find('\t'); tab2 != std::string_view::npos) {
    if (caption.substr(tab2 + 1).find('\t') != std::string_view::npos) {
      ++counts_.malformed;
      return;
    }
    caption = caption.substr(0, tab2);
  }
  add_caption(caption);
}

void CooccurrenceCounter::merge(const CooccurrenceCounts& partial) {
  counts_.counts += partial.counts;
  counts_.records += partial.records;
  counts_.malformed += partial.malformed;
}

CooccurrenceCounts CooccurrenceCounter::result() const {
  CooccurrenceCounts out = counts_;
  if (cfg_.smoothing == Smoothing::add_one) out.counts.array() += 1;
  return out;
}

namespace {

void report_malformed(const CooccurrenceCounts& c) {
  if (c.malformed > 0) {
    warn("CorpusFormat: skipped " + std::to_string(c.malformed) + " malformed caption record(s)");
  }
}

}  // namespace

CooccurrenceCounts count_cooccurrences(std::istream& corpus, const Vocabulary& vocab,
                                       MatchConfig cfg) {
  CooccurrenceCounter counter(vocab, cfg);
  std::string line;
  while (std::getline(corpus, line)) counter.add_record(line);
  auto out = counter.result();
  report_malformed(out);
  return out;
}

CooccurrenceCounts count_cooccurrences_file(const std::filesystem::path& corpus,
                                            const Vocabulary& vocab, MatchConfig cfg,
                                            unsigned threads) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(corpus, ec);
  if (ec) throw Error(ErrorCode::MissingPath, "cannot open corpus " + corpus.string());
  threads = std::max(1u, threads);

  // Shard boundaries sit just after a newline so no record is split.
  std::vector<std::uintmax_t> bounds{0};
  {
    std::ifstream in(corpus, std::ios::binary);
    for (unsigned s = 1; s < threads; ++s) {
      std::uintmax_t off = std::max<std::uintmax_t>(bounds.back(), size * s / threads);
      if (off >= size) break;
      in.clear();
      in.seekg(static_cast<std::streamoff>(off));
      std::string skip;
      if (off > 0) {
        in.seekg(static_cast<std::streamoff>(off - 1));
        std::getline(in, skip);
        off = in ? static_cast<std::uintmax_t>(in.tellg()) : size;
      }
      if (off > bounds.back() && off < size) bounds.push_back(off);
    }
  }
  bounds.push_back(size);

  const std::size_t shards = bounds.size() - 1;
  CooccurrenceCounter base(vocab, MatchConfig{cfg.plurals, Smoothing::none});
  std::vector<CooccurrenceCounts> partial(shards);
  auto run_shard = [&](std::size_t s) {
    CooccurrenceCounter counter(vocab, MatchConfig{cfg.plurals, Smoothing::none});
    std::ifstream in(corpus, std::ios::binary);
    in.seekg(static_cast<std::streamoff>(bounds[s]));
    std::string line;
    while (static_cast<std::uintmax_t>(in.tellg()) < bounds[s + 1] && std::getline(in, line)) {
      counter.add_record(line);
    }
    partial[s] = counter.raw();
  };
  if (shards == 1) {
    run_shard(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t s = 0; s < shards; ++s) pool.emplace_back(run_shard, s);
  }
  for (const auto& p : partial) base.merge(p);

  CooccurrenceCounts out = base.raw();
  if (cfg.smoothing == Smoothing::add_one) out.counts.array() += 1;
  report_malformed(out);
  return out;
}

const char* to_string(CombineMode mode) noexcept {
  switch (mode) {
    case CombineMode::multiply: return "multiply";
    case CombineMode::sum: return "sum";
    case CombineMode::llm_only: return "llm_only";
    case CombineMode::db_only: return "db_only";
    case CombineMode::uniform: return "uniform";
  }
  return "unknown";
}

CombineMode parse_combine_mode(const std::string& s) {
  for (auto m : {CombineMode::multiply, CombineMode::sum, CombineMode::llm_only,
                 CombineMode::db_only, CombineMode::uniform}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown combine mode '" + s + "'");
}

void CompatibilityTable::validate() const {
  const auto n = static_cast<Eigen::Index>(attributes.size());
  const auto m = static_cast<Eigen::Index>(objects.size());
  for (const auto* mat : {&phi_llm, &phi}) {
    if (mat->rows() != n || mat->cols() != m) {
      throw Error(ErrorCode::ShapeMismatch, "compatibility matrices must be |A| x |O|");
    }
  }
  if (phi_db.rows() != n || phi_db.cols() != m) {
    throw Error(ErrorCode::ShapeMismatch, "phi_db must be |A| x |O|");
  }
  if ((phi_db.array() < 0).any()) throw Error(ErrorCode::NegativeScore, "phi_db has negative counts");
  if ((phi_llm.array() < 0.0).any() || (phi_llm.array() > 10.0).any()) {
    throw Error(ErrorCode::NegativeScore, "phi_llm entries must lie in [0, 10]");
  }
  if ((phi.array() < 0.0).any()) throw Error(ErrorCode::NegativeScore, "phi has negative entries");
  if (combine_mode == CombineMode::multiply &&
      phi != fuse_scores(phi_db, phi_llm, CombineMode::multiply)) {
    throw Error(ErrorCode::ShapeMismatch, "phi does not equal phi_db * phi_llm");
  }
}

namespace {

template <typename Scalar>
nlohmann::ordered_json matrix_to_json(const RowMatrix<Scalar>& m) {
  auto out = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols) {
  if (j.size() != rows) throw Error(ErrorCode::ShapeMismatch, "matrix row count mismatch");
  RowMatrix<Scalar> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (j[r].size() != cols) throw Error(ErrorCode::ShapeMismatch, "matrix column count mismatch");
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<Scalar>();
    }
  }
  return m;
}

}  // namespace

nlohmann::ordered_json CompatibilityTable::to_json() const {
  nlohmann::ordered_json j;
  j["attributes"] = attributes;
  j["objects"] = objects;
  j["phi_db"] = matrix_to_json(phi_db);
  j["phi_llm"] = matrix_to_json(phi_llm);
  j["phi"] = matrix_to_json(phi);
  j["combine_mode"] = to_string(combine_mode);
  return j;
}

CompatibilityTable CompatibilityTable::from_json(const nlohmann::json& j) {
  CompatibilityTable t;
  try {
    t.attributes = j.at("attributes").get<std::vector<std::string>>();
    t.objects = j.at("objects").get<std::vector<std::string>>();
    const auto n = t.attributes.size(), m = t.objects.size();
    t.phi_db = matrix_from_json<std::int64_t>(j.at("phi_db"), n, m);
    t.phi_llm = matrix_from_json<double>(j.at("phi_llm"), n, m);
    t.phi = matrix_from_json<double>(j.at("phi"), n, m);
    t.combine_mode = parse_combine_mode(j.at("combine_mode").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ShapeMismatch, std::string("compatibility table: ") + e.what());
  }
  t.validate();
  return t;
}

CompatibilityTable CompatibilityTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingPath, "cannot open compatibility table " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ShapeMismatch, path.string() + ": " + e.what());
  }
}

void CompatibilityTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingPath, "cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

CompatibilityTable make_compatibility_table(const Vocabulary& vocab, CountMatrix phi_db,
                                            RowMatrixd phi_llm, CombineMode mode) {
  CompatibilityTable t;
  t.attributes = vocab.attribute_names();
  t.objects = vocab.objects;
  t.phi = fuse_scores(phi_db, phi_llm, mode);
  t.phi_db = std::move(phi_db);
  t.phi_llm = std::move(phi_llm);
  t.combine_mode = mode;
  t.validate();
  return t;
}

AttributeDistribution normalize_distribution(const Eigen::Ref<const Vectord>& phi_row,
                                             std::string attribute) {
  if (phi_row.size() == 0) throw Error(ErrorCode::EmptyVocabulary, "empty compatibility row");
  if ((phi_row.array() < 0.0).any()) {
    throw Error(ErrorCode::NegativeScore, "negative compatibility score for '" + attribute + "'");
  }
  AttributeDistribution d{std::move(attribute), {}};
  const double total = phi_row.sum();
  if (!(total > 0.0)) {
    warn("all-zero compatibility row for '" + d.attribute + "'; sampling objects uniformly");
    d.probs = Vectord::Constant(phi_row.size(), 1.0 / static_cast<double>(phi_row.size()));
  } else {
    d.probs = phi_row / total;
  }
  return d;
}

RowMatrixd attribute_given_object(const CompatibilityTable& table) {
  const RowMatrixd counts = table.phi_db.cast<double>().transpose();
  RowMatrixd out(counts.rows(), counts.cols());
  for (Eigen::Index o = 0; o < counts.rows(); ++o) {
    const double total = counts.row(o).sum();
    if (total > 0.0) {
      out.row(o) = counts.row(o) / total;
    } else {
      out.row(o).setConstant(1.0 / static_cast<double>(counts.cols()));
    }
  }
  return out;
}

}  // namespace comca
